#include "flats/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>

#include "flats/errors.hpp"

namespace flats {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + want);
}

long long parse_ll(const std::string& key, const std::string& value) {
    errno = 0;
    char* end = nullptr;
    long long v = std::strtoll(value.c_str(), &end, 10);
    if (errno != 0 || end == value.c_str() || *end != '\0') bad_value(key, value, "an integer");
    return v;
}

double parse_double(const std::string& key, const std::string& value) {
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(value.c_str(), &end);
    if (errno != 0 || end == value.c_str() || *end != '\0') bad_value(key, value, "a number");
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
    if (value == "false" || value == "0" || value == "no" || value == "off") return false;
    bad_value(key, value, "a boolean");
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct KeyDef {
    std::string name;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

std::vector<KeyDef> build_key_table() {
    std::vector<KeyDef> t;
    auto key_int = [&t](const char* name, int ExperimentConfig::* member) {
        t.push_back({name, [member](const ExperimentConfig& c) { return std::to_string(c.*member); },
                     [member, name](ExperimentConfig& c, const std::string& v) {
                         long long x = parse_ll(name, v);
                         if (x < INT32_MIN || x > INT32_MAX) bad_value(name, v, "an integer in range");
                         c.*member = static_cast<int>(x);
                     }});
    };
    auto key_u64 = [&t](const char* name, uint64_t ExperimentConfig::* member) {
        t.push_back({name, [member](const ExperimentConfig& c) { return std::to_string(c.*member); },
                     [member, name](ExperimentConfig& c, const std::string& v) {
                         errno = 0;
                         char* end = nullptr;
                         unsigned long long x = std::strtoull(v.c_str(), &end, 10);
                         if (errno != 0 || end == v.c_str() || *end != '\0') bad_value(name, v, "an unsigned integer");
                         c.*member = static_cast<uint64_t>(x);
                     }});
    };
    auto key_double = [&t](const char* name, double ExperimentConfig::* member) {
        t.push_back({name, [member](const ExperimentConfig& c) { return fmt_double(c.*member); },
                     [member, name](ExperimentConfig& c, const std::string& v) { c.*member = parse_double(name, v); }});
    };
    auto key_bool = [&t](const char* name, bool ExperimentConfig::* member) {
        t.push_back({name, [member](const ExperimentConfig& c) { return c.*member ? std::string("true") : std::string("false"); },
                     [member, name](ExperimentConfig& c, const std::string& v) { c.*member = parse_bool(name, v); }});
    };
    auto key_string = [&t](const char* name, std::string ExperimentConfig::* member) {
        t.push_back({name, [member](const ExperimentConfig& c) { return c.*member; },
                     [member](ExperimentConfig& c, const std::string& v) { c.*member = v; }});
    };

    key_u64("seed", &ExperimentConfig::seed);
    key_int("rounds", &ExperimentConfig::rounds);
    key_int("clients", &ExperimentConfig::clients);
    key_int("select", &ExperimentConfig::select);
    key_int("adv_clients", &ExperimentConfig::adv_clients);
    key_int("method", &ExperimentConfig::method);
    key_double("abr", &ExperimentConfig::abr);
    key_int("local_epochs", &ExperimentConfig::local_epochs);
    key_int("train_batch", &ExperimentConfig::train_batch);
    key_int("eval_batch", &ExperimentConfig::eval_batch);
    key_double("lr", &ExperimentConfig::lr);
    key_double("loss_mix", &ExperimentConfig::loss_mix);
    key_int("threads", &ExperimentConfig::threads);
    key_int("conv1_filters", &ExperimentConfig::conv1_filters);
    key_int("conv2_filters", &ExperimentConfig::conv2_filters);
    key_int("hidden", &ExperimentConfig::hidden);
    key_string("attack", &ExperimentConfig::attack);
    key_double("epsilon", &ExperimentConfig::epsilon);
    key_double("step_size", &ExperimentConfig::step_size);
    key_int("square_queries", &ExperimentConfig::square_queries);
    key_int("square_restarts", &ExperimentConfig::square_restarts);
    key_string("square_loss", &ExperimentConfig::square_loss);
    key_string("dataset", &ExperimentConfig::dataset);
    key_int("synth_classes", &ExperimentConfig::synth_classes);
    key_int("synth_per_class", &ExperimentConfig::synth_per_class);
    key_int("synth_test_per_class", &ExperimentConfig::synth_test_per_class);
    key_int("channels", &ExperimentConfig::channels);
    key_int("height", &ExperimentConfig::height);
    key_int("width", &ExperimentConfig::width);
    key_string("idx_train_images", &ExperimentConfig::idx_train_images);
    key_string("idx_train_labels", &ExperimentConfig::idx_train_labels);
    key_string("idx_test_images", &ExperimentConfig::idx_test_images);
    key_string("idx_test_labels", &ExperimentConfig::idx_test_labels);
    key_string("partition", &ExperimentConfig::partition);
    key_double("noniid_concentration", &ExperimentConfig::noniid_concentration);
    key_double("noniid_size_spread", &ExperimentConfig::noniid_size_spread);
    key_int("manip_clients", &ExperimentConfig::manip_clients);
    key_string("manip_kind", &ExperimentConfig::manip_kind);
    key_double("manip_br", &ExperimentConfig::manip_br);
    key_int("manip_factor", &ExperimentConfig::manip_factor);
    key_double("manip_fraction", &ExperimentConfig::manip_fraction);
    key_string("test_sets", &ExperimentConfig::test_sets);
    key_string("eval_attacks", &ExperimentConfig::eval_attacks);
    key_string("eval_mode", &ExperimentConfig::eval_mode);
    key_int("square_eval_samples", &ExperimentConfig::square_eval_samples);
    key_double("br_dark", &ExperimentConfig::br_dark);
    key_double("br_bright", &ExperimentConfig::br_bright);
    key_int("surrogate_hidden", &ExperimentConfig::surrogate_hidden);
    key_int("surrogate_epochs", &ExperimentConfig::surrogate_epochs);
    key_double("surrogate_lr", &ExperimentConfig::surrogate_lr);
    key_string("out", &ExperimentConfig::out);
    key_int("checkpoint_every", &ExperimentConfig::checkpoint_every);
    key_bool("plot_files", &ExperimentConfig::plot_files);
    key_int("dump_samples", &ExperimentConfig::dump_samples);
    return t;
}

const std::vector<KeyDef>& key_table() {
    static const std::vector<KeyDef> table = build_key_table();
    return table;
}

const KeyDef* find_key(const std::string& name) {
    for (const auto& k : key_table())
        if (k.name == name) return &k;
    return nullptr;
}

}  // namespace

void set_config_key(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    const KeyDef* def = find_key(key);
    if (!def) throw ConfigError("unknown config key '" + key + "'");
    def->set(cfg, value);
}

ExperimentConfig parse_config(const std::optional<std::string>& file,
                              const std::vector<std::pair<std::string, std::string>>& overrides) {
    ExperimentConfig cfg;
    if (file) {
        std::ifstream in(*file);
        if (!in) throw IoError("cannot open config file '" + *file + "'");
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
            line = trim(line);
            if (line.empty()) continue;
            size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config file '" + *file + "' line " + std::to_string(lineno) +
                                  ": expected key=value, got '" + line + "'");
            set_config_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }
    for (const auto& [key, value] : overrides) set_config_key(cfg, key, value);
    return cfg;
}

std::string render_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& k : key_table()) {
        out += k.name;
        out += '=';
        out += k.get(cfg);
        out += '\n';
    }
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> names;
    for (const auto& k : key_table()) names.push_back(k.name);
    return names;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            cur = trim(cur);
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
    return out;
}

namespace {

AttackConfig::SquareLoss parse_square_loss(const std::string& name) {
    if (name == "ce") return AttackConfig::SquareLoss::CrossEntropy;
    if (name == "margin") return AttackConfig::SquareLoss::Margin;
    throw ConfigError("config key 'square_loss': expected ce or margin, got '" + name + "'");
}

}  // namespace

AttackConfig make_attack(const ExperimentConfig& cfg, const std::string& name) {
    if (name == "fgsm") return AttackConfig::fgsm(static_cast<float>(cfg.epsilon));
    if (name == "ffgsm")
        return AttackConfig::ffgsm(static_cast<float>(cfg.epsilon), static_cast<float>(cfg.step_size));
    if (name == "square")
        return AttackConfig::square(static_cast<float>(cfg.epsilon), cfg.square_queries, cfg.square_restarts,
                                    parse_square_loss(cfg.square_loss));
    throw ConfigError("unknown attack '" + name + "' (expected fgsm, ffgsm or square)");
}

FedConfig to_fed_config(const ExperimentConfig& cfg) {
    FedConfig f;
    f.rounds = cfg.rounds;
    f.clients = cfg.clients;
    f.select_count = cfg.select;
    f.adv_count = cfg.adv_clients;
    f.schedule = cfg.method == 2 ? Schedule::MethodII : Schedule::MethodI;
    f.abr = cfg.abr;
    f.local_epochs = cfg.local_epochs;
    f.train_batch = cfg.train_batch;
    f.lr = static_cast<float>(cfg.lr);
    f.loss_mix = static_cast<float>(cfg.loss_mix);
    f.attack = make_attack(cfg, cfg.attack);
    f.seed = cfg.seed;
    f.threads = cfg.threads;
    return f;
}

void validate_config(const ExperimentConfig& cfg) {
    if (cfg.method != 1 && cfg.method != 2)
        throw ConfigError("config key 'method': expected 1 or 2, got " + std::to_string(cfg.method));
    if (!(cfg.epsilon > 0.0 && cfg.epsilon <= 1.0))
        throw ConfigError("config key 'epsilon': must lie in (0,1], got " + fmt_double(cfg.epsilon));
    if (!(cfg.step_size > 0.0)) throw ConfigError("config key 'step_size': must be > 0");
    if (cfg.eval_batch < 1) throw ConfigError("config key 'eval_batch': must be >= 1");
    to_fed_config(cfg).validate();  // rounds/clients/abr/lr/... checks

    if (cfg.dataset == "idx") {
        if (cfg.idx_train_images.empty() || cfg.idx_train_labels.empty() || cfg.idx_test_images.empty() ||
            cfg.idx_test_labels.empty())
            throw ConfigError("dataset=idx needs idx_train_images, idx_train_labels, idx_test_images, idx_test_labels");
    } else if (cfg.dataset == "synthetic") {
        if (cfg.synth_classes < 2) throw ConfigError("config key 'synth_classes': must be >= 2");
        if (cfg.synth_per_class < 1) throw ConfigError("config key 'synth_per_class': must be >= 1");
        if (cfg.synth_test_per_class < 1) throw ConfigError("config key 'synth_test_per_class': must be >= 1");
        if (cfg.channels < 1 || cfg.height < 2 || cfg.width < 2)
            throw ConfigError("synthetic image dimensions must be at least 1x2x2");
    } else {
        throw ConfigError("config key 'dataset': expected synthetic or idx, got '" + cfg.dataset + "'");
    }

    if (cfg.partition == "noniid") {
        if (!(cfg.noniid_concentration > 0.0)) throw ConfigError("config key 'noniid_concentration': must be > 0");
        if (!(cfg.noniid_size_spread >= 0.0)) throw ConfigError("config key 'noniid_size_spread': must be >= 0");
    } else if (cfg.partition != "iid") {
        throw ConfigError("config key 'partition': expected iid or noniid, got '" + cfg.partition + "'");
    }

    if (cfg.manip_clients < 0 || cfg.manip_clients > cfg.clients)
        throw ConfigError("config key 'manip_clients': must lie in [0, clients]");
    if (cfg.manip_clients > 0) {
        if (cfg.manip_kind == "brightness") {
            if (!(cfg.manip_br > 0.0)) throw ConfigError("config key 'manip_br': must be > 0");
        } else if (cfg.manip_kind == "pixel") {
            if (cfg.manip_factor < 1) throw ConfigError("config key 'manip_factor': must be >= 1");
        } else if (cfg.manip_kind == "occlusion") {
            if (!(cfg.manip_fraction > 0.0 && cfg.manip_fraction < 1.0))
                throw ConfigError("config key 'manip_fraction': must lie in (0,1)");
        } else {
            throw ConfigError("config key 'manip_kind': expected brightness, pixel or occlusion, got '" +
                              cfg.manip_kind + "'");
        }
    }

    for (const auto& name : split_csv(cfg.test_sets)) tdt_from_name(name);  // throws on unknown names
    if (split_csv(cfg.test_sets).empty()) throw ConfigError("config key 'test_sets': needs at least one entry");
    for (const auto& name : split_csv(cfg.eval_attacks)) make_attack(cfg, name);
    if (cfg.eval_mode != "white-box" && cfg.eval_mode != "surrogate" && cfg.eval_mode != "both")
        throw ConfigError("config key 'eval_mode': expected white-box, surrogate or both, got '" + cfg.eval_mode + "'");
    if (cfg.square_eval_samples < 0) throw ConfigError("config key 'square_eval_samples': must be >= 0");
    if (!(cfg.br_dark > 0.0)) throw ConfigError("config key 'br_dark': must be > 0");
    if (!(cfg.br_bright > 0.0)) throw ConfigError("config key 'br_bright': must be > 0");
    if (cfg.eval_mode != "white-box") {
        if (cfg.surrogate_hidden < 1) throw ConfigError("config key 'surrogate_hidden': must be >= 1");
        if (cfg.surrogate_epochs < 0) throw ConfigError("config key 'surrogate_epochs': must be >= 0");
        if (!(cfg.surrogate_lr > 0.0)) throw ConfigError("config key 'surrogate_lr': must be > 0");
    }
    if (cfg.conv1_filters < 1 || cfg.conv2_filters < 1 || cfg.hidden < 1)
        throw ConfigError("model sizes conv1_filters, conv2_filters and hidden must be >= 1");
    if (cfg.checkpoint_every < 0) throw ConfigError("config key 'checkpoint_every': must be >= 0");
    if (cfg.dump_samples < 0) throw ConfigError("config key 'dump_samples': must be >= 0");
}

}  // namespace flats
