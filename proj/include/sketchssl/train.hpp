#pragma once

#include <string>
#include <vector>

#include "sketchssl/augment.hpp"
#include "sketchssl/data.hpp"
#include "sketchssl/losses.hpp"
#include "sketchssl/models.hpp"
#include "sketchssl/nn.hpp"

namespace sketchssl {

struct OptimizerSettings {
    std::string kind = "adam";
    double lr = 1e-4;
    double weight_decay = 0.0;
};

struct TrainConfig {
    ModelKind model_kind = ModelKind::Vae;
    BackboneKind backbone = BackboneKind::ResNet50;
    int small_cnn_width = 32;
    int alexnet_fc_dim = 4096;
    int latent_dim = 32;
    int byol_proj_hidden = 4096;
    int byol_proj_dim = 256;
    double tau = 0.996;
    int resolution = 0;  // 0 -> model-kind default (256 VAE-family, 224 BYOL/supervised)
    int epochs = 30;
    int batch_size = 128;
    int labeled_batch_size = 32;
    OptimizerSettings optimizer;
    std::uint64_t seed = 1;
    AugmentationConfig augmentation;
    losses::LossWeights loss_weights;
    std::string n_train_mode = "labeled";  // Eq-2 N: "labeled" or "full"
    std::string pretrained_path;           // optional external backbone weights

    int effective_resolution() const;
    Polarity effective_polarity() const;
    void validate() const;
};

// Label-access auditing view over the train part of a split. Training code
// may only read labels through visible_label(); reading a hidden label
// throws and is counted.
class TrainView {
public:
    explicit TrainView(const DatasetSplit& split) : split_(&split) {}

    std::size_t size() const { return split_->train.size(); }
    const StrokeSketch& sketch(std::size_t i) const { return split_->train[i].sketch; }
    bool has_label(std::size_t i) const { return split_->train[i].label_visible; }
    int visible_label(std::size_t i) const {
        if (!split_->train[i].label_visible) {
            ++hidden_label_reads_;
            throw std::logic_error("attempted to read a hidden label (index " +
                                   std::to_string(i) + ")");
        }
        return split_->train[i].category_id;
    }
    long hidden_label_reads() const { return hidden_label_reads_; }

private:
    const DatasetSplit* split_;
    mutable long hidden_label_reads_ = 0;
};

struct StepRecord {
    int epoch = 0;
    int step = 0;
    double loss = 0.0;
    std::vector<std::pair<std::string, double>> components;
};

struct TrainResult {
    std::string final_checkpoint;
    std::string best_checkpoint;
    std::vector<double> epoch_mean_loss;
    std::vector<StepRecord> steps;
    long hidden_label_reads = 0;  // audit counter; must stay 0
};

struct RunMeta {
    std::string config_hash;
    std::string manifest_hash;
    std::string out_dir;       // metrics/checkpoints land here; empty = no files
    bool keep_step_records = true;
};

// Full training driver: builds the model, runs the per-kind step loop,
// writes metrics.jsonl and final/best checkpoints.
TrainResult train(const DatasetSplit& split, const TrainConfig& cfg, const RunMeta& meta);

// Model construction from a TrainConfig (n_classes = known categories).
ModelConfig model_config_from_train(const TrainConfig& cfg, int n_classes);

// One BYOL optimization step over a batch of sketches: view pairs ->
// forward -> loss -> online update -> EMA target update. Exposed for tests.
double byol_step(ByolModel& model, nn::Adam& opt,
                 const std::vector<const StrokeSketch*>& batch,
                 const AugmentationConfig& aug, int resolution, Rng& view_rng);

// One semi-supervised step (M2 or SSVAE) over one labeled + one unlabeled
// batch; either batch may be empty. Returns (total, components).
struct SemiStepOut {
    double total = 0.0;
    std::vector<std::pair<std::string, double>> components;
};
SemiStepOut semi_batch_step(SketchModel& model, nn::Adam& opt,
                            const TensorData& labeled_images,
                            const std::vector<int>& labels,
                            const TensorData& unlabeled_images,
                            const losses::LossWeights& w, Rng& rng);

}  // namespace sketchssl
