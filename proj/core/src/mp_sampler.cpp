#include "tforge/mp_sampler.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace tforge {

using json = nlohmann::json;

const SamplerEntry* SamplerTable::find(ClassId c_s, ClassId c_p) const {
    auto it = entries.find({c_s, c_p});
    return it == entries.end() ? nullptr : &it->second;
}

std::vector<ClassId> candidates(const LabelSpace& space, ClassId c_s, ClassId c_p) {
    std::vector<ClassId> out;
    for (const auto& t : space.valid_triples)
        if (t.subject == c_s && t.predicate == c_p) out.push_back(t.object);
    if (out.empty())
        throw std::runtime_error("no candidates for subject " + std::to_string(c_s) +
                                 ", predicate " + std::to_string(c_p));
    std::sort(out.begin(), out.end());
    return out;
}

double difficulty(const PredictionDump& dump, ClassId c_s, ClassId c_p, ClassId c_o) {
    auto it = dump.per_combo.find({c_s, c_p, c_o});
    if (it == dump.per_combo.end())
        throw std::runtime_error("combo absent from prediction dump");
    const std::vector<double>& l = it->second.mean;
    if (c_p < 0 || c_p >= static_cast<ClassId>(l.size()))
        throw std::runtime_error("predicate outside combo vector");
    const double top = *std::max_element(l.begin(), l.end());
    return top - l[static_cast<std::size_t>(c_p)];
}

std::pair<std::vector<double>, bool> probabilities(const std::vector<double>& difficulties) {
    if (difficulties.empty()) throw std::invalid_argument("probabilities on empty list");
    double total = 0.0;
    for (double d : difficulties) {
        if (d < 0.0) throw std::invalid_argument("negative difficulty");
        total += d;
    }
    std::vector<double> p(difficulties.size());
    if (total == 0.0) {
        std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(p.size()));
        return {p, true};
    }
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = difficulties[i] / total;
    return {p, false};
}

SamplerTable build_sampler(const LabelSpace& space, const PredictionDump& dump) {
    SamplerTable table;
    std::map<std::pair<ClassId, ClassId>, std::vector<ClassId>> by_pair;
    for (const auto& t : space.valid_triples)
        by_pair[{t.subject, t.predicate}].push_back(t.object);
    for (auto& [key, objs] : by_pair) {
        std::sort(objs.begin(), objs.end());
        SamplerEntry entry;
        for (ClassId c_o : objs) {
            if (!dump.per_combo.count({key.first, key.second, c_o})) continue;
            entry.candidates.push_back(c_o);
            entry.difficulty.push_back(difficulty(dump, key.first, key.second, c_o));
        }
        if (entry.candidates.empty()) continue;  // no biased-model support at all
        auto [p, fallback] = probabilities(entry.difficulty);
        entry.probabilities = std::move(p);
        entry.uniform_fallback = fallback;
        table.entries[key] = std::move(entry);
    }
    return table;
}

ClassId draw(const SamplerTable& table, ClassId c_s, ClassId c_p, Rng& rng) {
    const SamplerEntry* entry = table.find(c_s, c_p);
    if (!entry)
        throw std::runtime_error("no sampler entry for subject " + std::to_string(c_s) +
                                 ", predicate " + std::to_string(c_p));
    const double u = rng.uniform();
    double cum = 0.0;
    for (std::size_t i = 0; i < entry->candidates.size(); ++i) {
        cum += entry->probabilities[i];
        if (u < cum) return entry->candidates[i];
    }
    return entry->candidates.back();  // float round-off guard
}

void save_sampler(const SamplerTable& table, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write sampler: " + path);
    json entries = json::array();
    for (const auto& [key, e] : table.entries)
        entries.push_back(json{{"s", key.first},
                               {"p", key.second},
                               {"candidates", e.candidates},
                               {"d", e.difficulty},
                               {"prob", e.probabilities},
                               {"uniform_fallback", e.uniform_fallback}});
    out << json{{"entries", entries}}.dump(2) << "\n";
}

SamplerTable load_sampler(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open sampler: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    SamplerTable table;
    for (const auto& je : j.at("entries")) {
        SamplerEntry e;
        e.candidates = je.at("candidates").get<std::vector<ClassId>>();
        e.difficulty = je.at("d").get<std::vector<double>>();
        e.probabilities = je.at("prob").get<std::vector<double>>();
        e.uniform_fallback = je.at("uniform_fallback").get<bool>();
        if (e.candidates.size() != e.difficulty.size() ||
            e.candidates.size() != e.probabilities.size())
            throw std::runtime_error(path + ": sampler entry lists differ in length");
        table.entries[{je.at("s").get<ClassId>(), je.at("p").get<ClassId>()}] = std::move(e);
    }
    return table;
}

}  // namespace tforge
