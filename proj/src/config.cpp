#include "pad/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "pad/env.hpp"
#include "pad/errors.hpp"
#include "pad/nn.hpp"

namespace pad::config {

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

i64 parse_i64(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        i64 r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw DataError("config: bad integer for " + key + ": '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        std::uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw DataError("config: bad unsigned integer for " + key + ": '" + v + "'");
    }
}

double parse_f64(const std::string& v, const std::string& key) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw DataError("config: bad number for " + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw DataError("config: bad boolean for " + key + ": '" + v + "'");
}

std::vector<std::uint64_t> parse_u64_list(const std::string& v, const std::string& key) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_u64(item, key));
    }
    if (out.empty()) throw DataError("config: empty list for " + key);
    return out;
}

// One setter per known key; anything else is rejected.
using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> s = {
        {"run.env", [](RunConfig& c, const std::string& v, const std::string&) { c.env = v; }},
        {"run.regime",
         [](RunConfig& c, const std::string& v, const std::string&) { c.regime = v; }},
        {"run.seed",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.seed = parse_u64(v, k); }},
        {"run.run_root",
         [](RunConfig& c, const std::string& v, const std::string&) { c.run_root = v; }},
        {"data.episodes",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.episodes = parse_i64(v, k); }},
        {"data.episode_len",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.episode_len = parse_i64(v, k); }},
        {"data.path",
         [](RunConfig& c, const std::string& v, const std::string&) { c.dataset_path = v; }},
        {"model.latent_dim",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.model.latent_dim = parse_i64(v, k); }},
        {"model.past_len",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.model.past_len = parse_i64(v, k); }},
        {"model.horizon",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.model.horizon = parse_i64(v, k); }},
        {"model.conv_ch1",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.model.conv_ch1 = parse_i64(v, k); }},
        {"model.conv_ch2",
         [](RunConfig& c, const std::string& v, const std::string& k) {
             c.model.conv_ch2 = parse_i64(v, k);
             c.model.width = c.model.conv_ch2;
         }},
        {"model.blocks",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.model.blocks = parse_i64(v, k); }},
        {"model.heads",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.model.heads = parse_i64(v, k); }},
        {"model.mlp_ratio",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.model.mlp_ratio = parse_i64(v, k); }},
        {"model.refine_steps",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.model.refine_steps = parse_i64(v, k); }},
        {"model.eta_init",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.model.eta_init = parse_f64(v, k); }},
        {"model.proj_hidden",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.model.proj_hidden = parse_i64(v, k); }},
        {"model.lambda_dim",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.model.lambda_dim = parse_i64(v, k); }},
        {"model.enc_hidden",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.model.enc_hidden = parse_i64(v, k); }},
        {"model.invdyn_hidden",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.model.invdyn_hidden = parse_i64(v, k); }},
        {"train.steps",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.train.steps = parse_i64(v, k); }},
        {"train.batch_size",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.train.batch_size = parse_i64(v, k); }},
        {"train.lr_start",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.train.schedule.lr_start = parse_f64(v, k); }},
        {"train.lr_end",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.train.schedule.lr_end = parse_f64(v, k); }},
        {"train.projector",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.train.use_projector = parse_bool(v, k); }},
        {"train.checkpoint_every",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.train.checkpoint_every = parse_i64(v, k); }},
        {"train.loss_delta",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.train.loss_delta = parse_f64(v, k); }},
        {"train.grad_clip",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.train.grad_clip = parse_f64(v, k); }},
        {"train.weight_decay",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.train.adamw.weight_decay = parse_f64(v, k); }},
        {"invdyn.steps",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.invdyn.steps = parse_i64(v, k); }},
        {"invdyn.batch_size",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.invdyn.batch_size = parse_i64(v, k); }},
        {"invdyn.lr_start",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.invdyn.schedule.lr_start = parse_f64(v, k); }},
        {"invdyn.lr_end",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.invdyn.schedule.lr_end = parse_f64(v, k); }},
        {"plan.candidates",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.plan_candidates = parse_i64(v, k); }},
        {"plan.top_k",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.plan_top_k = parse_i64(v, k); }},
        {"plan.replan_interval",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.replan_interval = parse_i64(v, k); }},
        {"eval.episodes_per_task",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.eval_episodes_per_task = parse_i64(v, k); }},
        {"eval.seeds",
         [](RunConfig& c, const std::string& v, const std::string& k) { c.eval_seeds = parse_u64_list(v, k); }},
    };
    return s;
}

}  // namespace

std::string RunConfig::to_string() const {
    std::ostringstream os;
    os << "[run]\n";
    os << "env = " << env << "\n";
    os << "regime = " << regime << "\n";
    os << "seed = " << seed << "\n";
    os << "run_root = " << run_root << "\n";
    os << "\n[data]\n";
    os << "episodes = " << episodes << "\n";
    os << "episode_len = " << episode_len << "\n";
    if (!dataset_path.empty()) os << "path = " << dataset_path << "\n";
    os << "\n[model]\n";
    os << "latent_dim = " << model.latent_dim << "\n";
    os << "past_len = " << model.past_len << "\n";
    os << "horizon = " << model.horizon << "\n";
    os << "conv_ch1 = " << model.conv_ch1 << "\n";
    os << "conv_ch2 = " << model.conv_ch2 << "\n";
    os << "blocks = " << model.blocks << "\n";
    os << "heads = " << model.heads << "\n";
    os << "mlp_ratio = " << model.mlp_ratio << "\n";
    os << "refine_steps = " << model.refine_steps << "\n";
    os << "eta_init = " << fmt_double(model.eta_init) << "\n";
    os << "proj_hidden = " << model.proj_hidden << "\n";
    os << "lambda_dim = " << model.lambda_dim << "\n";
    os << "enc_hidden = " << model.enc_hidden << "\n";
    os << "invdyn_hidden = " << model.invdyn_hidden << "\n";
    os << "\n[train]\n";
    os << "steps = " << train.steps << "\n";
    os << "batch_size = " << train.batch_size << "\n";
    os << "lr_start = " << fmt_double(train.schedule.lr_start) << "\n";
    os << "lr_end = " << fmt_double(train.schedule.lr_end) << "\n";
    os << "projector = " << (train.use_projector ? "true" : "false") << "\n";
    os << "checkpoint_every = " << train.checkpoint_every << "\n";
    os << "loss_delta = " << fmt_double(train.loss_delta) << "\n";
    os << "grad_clip = " << fmt_double(train.grad_clip) << "\n";
    os << "weight_decay = " << fmt_double(train.adamw.weight_decay) << "\n";
    os << "\n[invdyn]\n";
    os << "steps = " << invdyn.steps << "\n";
    os << "batch_size = " << invdyn.batch_size << "\n";
    os << "lr_start = " << fmt_double(invdyn.schedule.lr_start) << "\n";
    os << "lr_end = " << fmt_double(invdyn.schedule.lr_end) << "\n";
    os << "\n[plan]\n";
    os << "candidates = " << plan_candidates << "\n";
    os << "top_k = " << plan_top_k << "\n";
    os << "replan_interval = " << replan_interval << "\n";
    os << "\n[eval]\n";
    os << "episodes_per_task = " << eval_episodes_per_task << "\n";
    os << "seeds = ";
    for (size_t i = 0; i < eval_seeds.size(); ++i) os << (i ? "," : "") << eval_seeds[i];
    os << "\n";
    return os.str();
}

std::string RunConfig::planner_config_string() const {
    std::string text = to_string();
    size_t cut = text.find("\n[invdyn]");
    if (cut != std::string::npos) text.resize(cut + 1);
    return text;
}

std::string RunConfig::hash() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(nn::fnv1a64(planner_config_string())));
    return buf;
}

std::string RunConfig::run_dir() const {
    const char* env_root = std::getenv("PAD_RUN_DIR");
    std::string root = env_root && *env_root ? env_root : run_root;
    return root + "/" + hash() + "-" + std::to_string(seed);
}

std::string RunConfig::default_dataset_path() const {
    const char* env_root = std::getenv("PAD_RUN_DIR");
    std::string root = env_root && *env_root ? env_root : run_root;
    return root + "/datasets/" + env + "-" + regime + "-" + std::to_string(episodes) + "-" +
           std::to_string(seed) + ".padds";
}

void RunConfig::finalize() {
    auto e = env::make_env(env);
    model.state_dim = e->state_dim();
    model.action_dim = e->action_dim();
    train.seed = seed;
    invdyn.seed = seed;
    train.schedule.total_steps = train.steps;
    invdyn.schedule.total_steps = invdyn.steps;
    model.validate();
    if (plan_candidates < 1 || plan_top_k < 1 || plan_top_k > plan_candidates)
        throw DataError("config: need 1 <= plan.top_k <= plan.candidates");
    if (replan_interval < 1 || replan_interval > model.horizon)
        throw DataError("config: plan.replan_interval must be in [1, horizon]");
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line, section;
    i64 lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw DataError("config line " + std::to_string(lineno) + ": bad section header");
            section = t.substr(1, t.size() - 2);
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw DataError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (section.empty())
            throw DataError("config line " + std::to_string(lineno) + ": key outside a section");
        std::string full = section + "." + key;
        auto it = setters().find(full);
        if (it == setters().end())
            throw DataError("config line " + std::to_string(lineno) + ": unknown key '" + full +
                            "'");
        it->second(cfg, value, full);
    }
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw DataError("override must look like section.key=value: '" + assignment + "'");
    std::string key = trim(assignment.substr(0, eq));
    std::string value = trim(assignment.substr(eq + 1));
    auto it = setters().find(key);
    if (it == setters().end()) throw DataError("unknown config key '" + key + "'");
    it->second(cfg, value, key);
}

}  // namespace pad::config
