#include "psol/config.hpp"

#include "psol/error.hpp"

#include <fstream>
#include <set>

namespace psol {

using nlohmann::json;

const char* to_string(LrPolicy p)
{
    return p == LrPolicy::fixed ? "fixed" : "step";
}

LrPolicy lr_policy_from_string(const std::string& s)
{
    if (s == "fixed")
        return LrPolicy::fixed;
    if (s == "step" || s == "step-decay")
        return LrPolicy::step_decay;
    throw ConfigError("unknown lr_policy '" + s + "' (expected fixed or step)");
}

void to_json(json& j, const TrainConfig& cfg)
{
    j = json{{"lr", cfg.lr},
             {"momentum", cfg.momentum},
             {"weight_decay", cfg.weight_decay},
             {"batch_size", cfg.batch_size},
             {"epochs", cfg.epochs},
             {"lr_policy", to_string(cfg.lr_policy)},
             {"step_every", cfg.step_every},
             {"step_factor", cfg.step_factor},
             {"lr_mult", cfg.lr_mult},
             {"hidden", cfg.hidden},
             {"lambda", cfg.lambda},
             {"seed", cfg.seed}};
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where)
{
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key))
            throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out)
{
    if (j.contains(key))
        out = j.at(key).get<T>();
}

} // namespace

void from_json(const json& j, TrainConfig& cfg)
{
    if (!j.is_object())
        throw ConfigError("\"train\" must be an object");
    reject_unknown(j,
                   {"lr", "momentum", "weight_decay", "batch_size", "epochs", "lr_policy", "step_every",
                    "step_factor", "lr_mult", "hidden", "lambda", "seed"},
                   "train config");
    try {
        read_opt(j, "lr", cfg.lr);
        read_opt(j, "momentum", cfg.momentum);
        read_opt(j, "weight_decay", cfg.weight_decay);
        read_opt(j, "batch_size", cfg.batch_size);
        read_opt(j, "epochs", cfg.epochs);
        if (j.contains("lr_policy"))
            cfg.lr_policy = lr_policy_from_string(j.at("lr_policy").get<std::string>());
        read_opt(j, "step_every", cfg.step_every);
        read_opt(j, "step_factor", cfg.step_factor);
        read_opt(j, "lr_mult", cfg.lr_mult);
        read_opt(j, "hidden", cfg.hidden);
        read_opt(j, "lambda", cfg.lambda);
        read_opt(j, "seed", cfg.seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
}

RunConfig parse_run_config(const json& j, const std::filesystem::path& base_dir)
{
    if (!j.is_object())
        throw ConfigError("config must be a JSON object");
    reject_unknown(j,
                   {"manifest", "feature_dir", "pooled_features", "classifier_weights", "pseudo_boxes",
                    "output_dir", "method", "split", "eval_split", "cam_threshold", "num_classes", "threads",
                    "train"},
                   "config");
    const auto path = [&](const char* key) { return base_dir / j.at(key).get<std::string>(); };
    RunConfig cfg;
    try {
        if (j.contains("manifest"))
            cfg.manifest = path("manifest");
        if (j.contains("feature_dir"))
            cfg.feature_dir = path("feature_dir");
        if (j.contains("pooled_features"))
            cfg.pooled_features = path("pooled_features");
        if (j.contains("classifier_weights"))
            cfg.classifier_weights = path("classifier_weights");
        if (j.contains("pseudo_boxes"))
            cfg.pseudo_boxes = path("pseudo_boxes");
        cfg.output_dir = j.contains("output_dir") ? path("output_dir") : base_dir / "out";
        if (j.contains("method"))
            cfg.method = box_method_from_string(j.at("method").get<std::string>());
        if (j.contains("split"))
            cfg.split = split_from_string(j.at("split").get<std::string>());
        if (j.contains("eval_split"))
            cfg.eval_split = split_from_string(j.at("eval_split").get<std::string>());
        read_opt(j, "cam_threshold", cfg.cam_threshold);
        if (j.contains("num_classes"))
            cfg.num_classes = j.at("num_classes").get<int>();
        read_opt(j, "threads", cfg.threads);
        if (j.contains("train")) {
            from_json(j.at("train"), cfg.train);
            if (j.at("train").contains("lr_policy"))
                cfg.explicit_lr_policy = cfg.train.lr_policy;
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const ValidationError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (cfg.threads < 1)
        throw ConfigError("config: threads must be >= 1");
    if (cfg.num_classes && *cfg.num_classes < 1)
        throw ConfigError("config: num_classes must be >= 1");
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config '" + path.string() + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return parse_run_config(j, path.parent_path());
}

} // namespace psol
