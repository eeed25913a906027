#pragma once

#include "coconet/archive.hpp"
#include "coconet/backbone.hpp"
#include "coconet/fusion_net.hpp"
#include "coconet/image.hpp"
#include "coconet/losses.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace coconet {

struct TrainConfig {
    int patch_size = 64;
    int patch_count = 1410;
    int batch_size = 30;
    int stage2_batch_size = 30;
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double alpha = kDefaultAlpha;
    int stage1_epochs = 10;
    int stage2_epochs = 5;
    int negatives = 3;
    int alternations = 1;  // train/fine-tune passes
    std::uint64_t seed = 0;
    FusionMode mode = FusionMode::Ivif;
    std::vector<double> layer_weights = default_layer_weights();
    double clip_norm = 5.0; // 0 disables clipping
    std::optional<std::size_t> stage1_max_steps;
    std::optional<std::size_t> stage2_max_steps;

    void validate() const;

    static TrainConfig ivif();
    static TrainConfig medical_pet();   // 2662 patches, 3 + 1 epochs, batch 30 / 10
    static TrainConfig medical_spect(); // 4114 patches, 3 + 1 epochs, batch 30 / 10
};

nlohmann::json to_json(const TrainConfig& cfg);
// Unknown keys are rejected; missing keys keep the values already in `base`.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

std::string to_string(FusionMode mode);
FusionMode parse_mode(const std::string& s);

// Negatives are patch indices: for the first contrastive term the
// opposite-modality image of each listed patch is used, and symmetrically for
// the second. negatives[0] is always the sample's own patch.
struct ContrastiveSample {
    std::size_t patch = 0;
    std::vector<std::size_t> negatives;
};

struct ContrastiveSamples {
    std::vector<ContrastiveSample> samples;
    std::optional<std::string> warning;
};

ContrastiveSamples build_contrastive_samples(const PatchSet& patches, const TrainConfig& cfg, std::uint64_t seed);

class Adam {
public:
    Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(const std::vector<Param*>& params);
    std::size_t steps() const { return t_; }

    std::vector<ArchiveArray> state_arrays(const std::vector<Param*>& params) const;
    void load_state(const Archive& archive, const std::vector<Param*>& params, std::size_t t);

private:
    double lr_;
    double b1_;
    double b2_;
    double eps_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

struct LogRow {
    std::size_t step = 0;
    int stage = 1;
    LossBreakdown loss;
    AdaptiveWeights weights; // batch mean
};

struct TrainingLog {
    FusionMode mode = FusionMode::Ivif;
    std::vector<LogRow> rows;

    std::string to_csv() const;
};

// Runs the two optimisation stages on one model. Optimiser state and the step
// counter carry over between stages and through checkpoints.
class Trainer {
public:
    Trainer(FusionNet& model, const Backbone& backbone, TrainConfig cfg);

    // Checkpoint + run manifest after every epoch when set.
    void set_output_dir(std::filesystem::path dir) { output_dir_ = std::move(dir); }
    // Called after every optimiser step.
    void set_step_callback(std::function<void(const LogRow&)> cb) { on_step_ = std::move(cb); }

    TrainingLog train_stage1(std::span<const SourcePair> corpus);
    TrainingLog finetune_stage2(std::span<const SourcePair> corpus);
    // Alternates stage 1 and stage 2 cfg.alternations times.
    TrainingLog run(std::span<const SourcePair> corpus, bool stage1_only = false);

    std::size_t step() const { return adam_.steps(); }
    const TrainConfig& config() const { return cfg_; }
    // Rows logged so far, including those of an aborted stage.
    const TrainingLog& log() const { return log_; }

    void save_checkpoint(const std::filesystem::path& path);
    // Restores parameters, buffers, optimiser state and step counter.
    void load_checkpoint(const std::filesystem::path& path);

    // Steps one stage performs: epochs × ceil(patch_count / batch), capped by
    // the optional max-steps override.
    std::size_t planned_steps(int stage) const;

private:
    TrainingLog run_stage(std::span<const SourcePair> corpus, int stage);
    void write_epoch_outputs(std::span<const SourcePair> corpus, int stage, int epoch);

    FusionNet& model_;
    const Backbone& backbone_;
    TrainConfig cfg_;
    Adam adam_;
    TrainingLog log_;
    std::optional<std::filesystem::path> output_dir_;
    std::function<void(const LogRow&)> on_step_;
};

inline constexpr int kCheckpointVersion = 1;

Archive checkpoint_archive(FusionNet& model, const Adam* adam, std::size_t step, const TrainConfig& cfg);
// Reads a checkpoint into a new model (config flags and seed come from the file).
FusionNet load_model(const std::filesystem::path& path);

// CRC32 over every pair's pixels and mask bits, in corpus order.
std::uint32_t corpus_hash(std::span<const SourcePair> corpus);

} // namespace coconet
