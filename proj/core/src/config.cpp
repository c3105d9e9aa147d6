#include "tforge/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "tforge/rng.hpp"

namespace tforge {

using json = nlohmann::json;

namespace {

[[noreturn]] void fail_at(const std::string& origin, std::size_t line, const std::string& msg) {
    throw std::runtime_error(origin + ":" + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

// strip a trailing comment, honoring double quotes
std::string strip_comment(const std::string& s) {
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') quoted = !quoted;
        if (s[i] == '#' && !quoted) return s.substr(0, i);
    }
    return s;
}

bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-' && c != '.')
            return false;
    return true;
}

std::string parse_scalar(const std::string& raw, const std::string& origin, std::size_t line) {
    if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"')
        return raw.substr(1, raw.size() - 2);
    if (raw.empty()) fail_at(origin, line, "empty value");
    if (raw.front() == '"') fail_at(origin, line, "unterminated string");
    return raw;
}

std::vector<std::string> split_array(const std::string& body, const std::string& origin,
                                     std::size_t line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (char c : body) {
        if (c == '"') quoted = !quoted;
        if (c == ',' && !quoted) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    const std::string last = trim(cur);
    if (!last.empty()) out.push_back(last);
    for (std::string& s : out) s = parse_scalar(s, origin, line);
    return out;
}

}  // namespace

bool ConfigFile::has(const std::string& key) const {
    return values.count(key) > 0 || lists.count(key) > 0;
}

std::string ConfigFile::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("config key " + key + ": not a number: " + it->second);
    }
}

std::int64_t ConfigFile::get_int(const std::string& key, std::int64_t fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(it->second, &pos, 10);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("config key " + key + ": not an integer: " + it->second);
    }
}

std::uint64_t ConfigFile::get_uint(const std::string& key, std::uint64_t fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        std::size_t pos = 0;
        const unsigned long long v = std::stoull(it->second, &pos, 10);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("config key " + key + ": not an unsigned integer: " + it->second);
    }
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    if (it->second == "true") return true;
    if (it->second == "false") return false;
    throw std::runtime_error("config key " + key + ": not a bool: " + it->second);
}

std::vector<int> ConfigFile::get_int_list(const std::string& key,
                                          std::vector<int> fallback) const {
    auto it = lists.find(key);
    if (it == lists.end()) {
        // a single scalar also reads as a one-element list
        auto sit = values.find(key);
        if (sit == values.end()) return fallback;
        return {static_cast<int>(get_int(key, 0))};
    }
    std::vector<int> out;
    for (const std::string& s : it->second) {
        try {
            std::size_t pos = 0;
            out.push_back(static_cast<int>(std::stoll(s, &pos, 10)));
            if (pos != s.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw std::runtime_error("config key " + key + ": not an integer list entry: " + s);
        }
    }
    return out;
}

ConfigFile parse_config_text(const std::string& text, const std::string& origin) {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail_at(origin, line_no, "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!valid_key(section)) fail_at(origin, line_no, "bad section name");
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) fail_at(origin, line_no, "expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!valid_key(key)) fail_at(origin, line_no, "bad key: " + key);
        const std::string full = section.empty() ? key : section + "." + key;
        if (cfg.has(full)) fail_at(origin, line_no, "duplicate key: " + full);
        if (!value.empty() && value.front() == '[') {
            if (value.back() != ']') fail_at(origin, line_no, "unterminated array");
            cfg.lists[full] = split_array(value.substr(1, value.size() - 2), origin, line_no);
        } else {
            cfg.values[full] = parse_scalar(value, origin, line_no);
        }
    }
    return cfg;
}

ConfigFile load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open config " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

RunConfig RunConfig::from_file(const ConfigFile& f) {
    RunConfig c;
    c.annotations = f.get_string("paths.annotations", c.annotations);
    c.predictions = f.get_string("paths.predictions", c.predictions);
    c.features = f.get_string("paths.features", c.features);
    c.output = f.get_string("paths.output", c.output);

    c.k_i = f.get_double("ietrans.k_i", c.k_i);
    c.k_e = f.get_double("ietrans.k_e", c.k_e);
    c.tau_aff = f.get_double("ietrans.tau_aff", c.tau_aff);

    c.k_s = f.get_double("soft.k_s", c.k_s);
    c.q_mode = parse_q_mode(f.get_string("soft.q_mode", q_mode_name(c.q_mode)));

    c.fsta.n_t = static_cast<int>(f.get_int("fsta.n_t", c.fsta.n_t));
    c.fsta.s_iou = f.get_double("fsta.s_iou", c.fsta.s_iou);
    c.fsta.u_h = f.get_double("fsta.u_h", c.fsta.u_h);
    c.fsta.alpha = f.get_double("fsta.alpha", c.fsta.alpha);
    c.fsta.tail_only_s_po = f.get_bool("fsta.tail_only", c.fsta.tail_only_s_po);

    c.gan.d_z = static_cast<int>(f.get_int("gan.d_z", c.gan.d_z));
    c.gan.feature_dim = static_cast<int>(f.get_int("gan.feature_dim", c.gan.feature_dim));
    c.gan.cond_dim = static_cast<int>(f.get_int("gan.cond_dim", c.gan.cond_dim));
    c.gan.hidden = static_cast<int>(f.get_int("gan.hidden", c.gan.hidden));
    c.gan.lr = f.get_double("gan.lr", c.gan.lr);
    c.gan.batch = static_cast<int>(f.get_int("gan.batch", c.gan.batch));
    c.gan.d_train_iter = static_cast<int>(f.get_int("gan.d_train_iter", c.gan.d_train_iter));
    c.gan.max_iter = f.get_int("gan.max_iter", c.gan.max_iter);
    c.gan.lambda_gp = f.get_double("gan.lambda_gp", c.gan.lambda_gp);
    c.gan.beta = f.get_double("gan.beta", c.gan.beta);
    c.gan.gamma = f.get_double("gan.gamma", c.gan.gamma);
    c.gan.leaky_slope = f.get_double("gan.leaky_slope", c.gan.leaky_slope);
    c.gan.pretrain_epochs =
        static_cast<int>(f.get_int("gan.pretrain_epochs", c.gan.pretrain_epochs));
    c.gan.pretrain_lr = f.get_double("gan.pretrain_lr", c.gan.pretrain_lr);
    c.gan.eval_every = static_cast<int>(f.get_int("gan.eval_every", c.gan.eval_every));
    c.gan.eval_per_class = static_cast<int>(f.get_int("gan.eval_per_class", c.gan.eval_per_class));

    c.eval_ks = f.get_int_list("eval.k", c.eval_ks);
    c.iou_thr = f.get_double("eval.iou", c.iou_thr);

    c.seed = f.get_uint("seed", c.seed);
    return c;
}

void RunConfig::validate() const {
    for (double k : {k_i, k_e, k_s})
        if (k < 0.0 || k > 100.0)
            throw std::invalid_argument("transfer percentiles must lie in [0, 100]");
    fsta.validate();
    gan.validate();
    if (eval_ks.empty()) throw std::invalid_argument("eval.k must not be empty");
    for (int k : eval_ks)
        if (k < 1) throw std::invalid_argument("eval.k entries must be >= 1");
    if (iou_thr <= 0.0 || iou_thr > 1.0) throw std::invalid_argument("eval.iou must be in (0, 1]");
}

namespace {

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

std::map<std::string, std::string> RunConfig::echo() const {
    std::map<std::string, std::string> e;
    e["paths.annotations"] = annotations;
    e["paths.predictions"] = predictions;
    e["paths.features"] = features;
    e["paths.output"] = output;
    e["ietrans.k_i"] = fmt_double(k_i);
    e["ietrans.k_e"] = fmt_double(k_e);
    e["ietrans.tau_aff"] = fmt_double(tau_aff);
    e["soft.k_s"] = fmt_double(k_s);
    e["soft.q_mode"] = q_mode_name(q_mode);
    e["fsta.n_t"] = std::to_string(fsta.n_t);
    e["fsta.s_iou"] = fmt_double(fsta.s_iou);
    e["fsta.u_h"] = fmt_double(fsta.u_h);
    e["fsta.alpha"] = fmt_double(fsta.alpha);
    e["fsta.tail_only"] = fsta.tail_only_s_po ? "true" : "false";
    e["gan.d_z"] = std::to_string(gan.d_z);
    e["gan.feature_dim"] = std::to_string(gan.feature_dim);
    e["gan.cond_dim"] = std::to_string(gan.cond_dim);
    e["gan.hidden"] = std::to_string(gan.hidden);
    e["gan.lr"] = fmt_double(gan.lr);
    e["gan.batch"] = std::to_string(gan.batch);
    e["gan.d_train_iter"] = std::to_string(gan.d_train_iter);
    e["gan.max_iter"] = std::to_string(gan.max_iter);
    e["gan.lambda_gp"] = fmt_double(gan.lambda_gp);
    e["gan.beta"] = fmt_double(gan.beta);
    e["gan.gamma"] = fmt_double(gan.gamma);
    e["gan.leaky_slope"] = fmt_double(gan.leaky_slope);
    e["gan.pretrain_epochs"] = std::to_string(gan.pretrain_epochs);
    e["gan.pretrain_lr"] = fmt_double(gan.pretrain_lr);
    e["gan.eval_every"] = std::to_string(gan.eval_every);
    e["gan.eval_per_class"] = std::to_string(gan.eval_per_class);
    std::string ks;
    for (int k : eval_ks) ks += (ks.empty() ? "" : ",") + std::to_string(k);
    e["eval.k"] = ks;
    e["eval.iou"] = fmt_double(iou_thr);
    e["seed"] = std::to_string(seed);
    return e;
}

std::uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    // FNV-1a, streamed
    std::uint64_t h = 14695981039346656037ull;
    char buf[1 << 15];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
        if (!in) break;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

void write_manifest(const std::string& output_path, const std::string& tool,
                    const std::map<std::string, std::string>& config_echo, std::uint64_t seed,
                    const std::vector<std::string>& inputs) {
    json root;
    root["tool"] = tool;
    root["seed"] = seed;
    root["config"] = config_echo;
    json in = json::object();
    for (const std::string& p : inputs) in[p] = hash_hex(hash_file(p));
    root["inputs"] = std::move(in);
    root["output"] = output_path;
    root["output_hash"] = hash_hex(hash_file(output_path));
    std::ofstream out(output_path + ".manifest.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest for " + output_path);
    out << root.dump(2) << "\n";
}

}  // namespace tforge
