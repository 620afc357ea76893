#include "sketchssl/config.hpp"

#include <fstream>
#include <sstream>

using nlohmann::json;

namespace sketchssl {

void apply_override(json& j, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects key.path=value, got: " + spec);
    const std::string path = spec.substr(0, eq);
    const std::string value = spec.substr(eq + 1);

    json* cur = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        if (key.empty()) throw ConfigError("--set has an empty path segment: " + spec);
        if (dot == std::string::npos) {
            json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
            (*cur)[key] = parsed.is_discarded() ? json(value) : parsed;
            return;
        }
        cur = &(*cur)[key];
        start = dot + 1;
    }
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text,
                                                  const std::vector<std::string>& overrides) {
    ExperimentConfig cfg;
    try {
        cfg.raw = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed config JSON: ") + e.what());
    }
    for (const auto& o : overrides) apply_override(cfg.raw, o);
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path,
                                        const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str(), overrides);
}

std::string ExperimentConfig::hash() const { return hash_string(raw.dump()); }

SplitSpec ExperimentConfig::split_spec() const {
    const json d = raw.value("data", json::object());
    SplitSpec s;
    s.n_categories = d.value("n_categories", 128);
    s.samples_per_class = d.value("samples_per_class", 1000);
    s.test_per_class = d.value("test_per_class", 100);
    s.label_fraction = d.value("label_fraction", 0.0);
    s.label_mode = d.value("label_mode", "stratified");
    s.seed = d.value("seed", std::uint64_t{0});
    return s;
}

std::string ExperimentConfig::data_dir() const {
    const json d = raw.value("data", json::object());
    return d.value("dir", "");
}

std::string ExperimentConfig::out_dir() const {
    const json p = raw.value("paths", json::object());
    return p.value("out_dir", "runs/default");
}

DistanceMetric ExperimentConfig::eval_metric() const {
    const json e = raw.value("eval", json::object());
    return metric_from_name(e.value("metric", "euclidean"));
}

int ExperimentConfig::eval_k() const {
    const json e = raw.value("eval", json::object());
    return e.value("k", 5);
}

AugmentationConfig augmentation_from_json(const json& j) {
    AugmentationConfig a;
    a.p_line_skip = j.value("p_line_skip", 0.5);
    a.skip_fraction = j.value("skip_fraction", 0.1);
    a.p_rotate = j.value("p_rotate", 0.5);
    a.angle_min_deg = j.value("angle_min_deg", -30.0);
    a.angle_max_deg = j.value("angle_max_deg", 30.0);
    a.p_hflip = j.value("p_hflip", 0.5);
    a.p_crop = j.value("p_crop", 1.0);
    a.crop_scale_min = j.value("crop_scale_min", 0.3);
    a.crop_scale_max = j.value("crop_scale_max", 1.0);
    a.validate();
    return a;
}

json augmentation_to_json(const AugmentationConfig& a) {
    return json{{"p_line_skip", a.p_line_skip},
                {"skip_fraction", a.skip_fraction},
                {"p_rotate", a.p_rotate},
                {"angle_min_deg", a.angle_min_deg},
                {"angle_max_deg", a.angle_max_deg},
                {"p_hflip", a.p_hflip},
                {"p_crop", a.p_crop},
                {"crop_scale_min", a.crop_scale_min},
                {"crop_scale_max", a.crop_scale_max}};
}

TrainConfig ExperimentConfig::train_config() const {
    const json m = raw.value("model", json::object());
    const json t = raw.value("train", json::object());
    const json l = raw.value("loss", json::object());

    TrainConfig c;
    c.model_kind = model_kind_from_name(m.value("kind", "vae"));
    c.backbone = backbone_from_name(m.value("backbone", "resnet50"));
    c.small_cnn_width = m.value("small_cnn_width", 32);
    c.alexnet_fc_dim = m.value("alexnet_fc_dim", 4096);
    c.latent_dim = m.value("latent_dim", 32);
    c.byol_proj_hidden = m.value("byol_proj_hidden", 4096);
    c.byol_proj_dim = m.value("byol_proj_dim", 256);
    c.tau = m.value("tau", 0.996);
    c.resolution = m.value("resolution", 0);
    c.pretrained_path = m.value("pretrained_path", "");

    c.epochs = t.value("epochs", 30);
    c.batch_size = t.value("batch_size", 128);
    c.labeled_batch_size = t.value("labeled_batch_size", 32);
    c.seed = t.value("seed", std::uint64_t{1});
    const json o = t.value("optimizer", json::object());
    c.optimizer.kind = o.value("kind", "adam");
    c.optimizer.lr = o.value("lr", 1e-4);
    c.optimizer.weight_decay = o.value("weight_decay", 0.0);

    c.augmentation = augmentation_from_json(raw.value("augment", json::object()));

    c.loss_weights.beta = l.value("beta", 0.1);
    c.loss_weights.alpha = l.value("alpha", 0.1);
    c.loss_weights.m2_ce_scale = l.value("m2_ce_scale", 0.1);
    c.loss_weights.m2_entropy_sign = l.value("m2_entropy_sign", 1.0);
    c.n_train_mode = l.value("n_train_mode", "labeled");

    c.validate();
    return c;
}

}  // namespace sketchssl
