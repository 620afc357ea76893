#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "sketchssl/data.hpp"
#include "sketchssl/eval.hpp"
#include "sketchssl/train.hpp"

namespace sketchssl {

// One JSON document drives every subcommand. Sections: data, model, train,
// augment, loss, eval, paths. `--set a.b.c=value` overrides individual keys.
struct ExperimentConfig {
    nlohmann::json raw;

    std::string hash() const;  // fingerprint of the canonical dump

    SplitSpec split_spec() const;
    TrainConfig train_config() const;
    std::string data_dir() const;
    std::string out_dir() const;
    DistanceMetric eval_metric() const;
    int eval_k() const;

    static ExperimentConfig load(const std::string& path,
                                 const std::vector<std::string>& overrides);
    static ExperimentConfig from_json_text(const std::string& text,
                                           const std::vector<std::string>& overrides = {});
};

// Apply one "dotted.path=value" override; values parse as JSON when possible,
// else as strings.
void apply_override(nlohmann::json& j, const std::string& spec);

AugmentationConfig augmentation_from_json(const nlohmann::json& j);
nlohmann::json augmentation_to_json(const AugmentationConfig& a);

}  // namespace sketchssl
