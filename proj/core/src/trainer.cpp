#include "coconet/trainer.hpp"

#include "coconet/adaptive_weights.hpp"
#include "coconet/error.hpp"
#include "coconet/image_io.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace coconet {

void TrainConfig::validate() const {
    const auto positive = [](long long v, const char* name) {
        if (v <= 0) throw ConfigError(fmt::format("{} must be positive (got {})", name, v));
    };
    positive(patch_size, "patch_size");
    positive(patch_count, "patch_count");
    positive(batch_size, "batch_size");
    positive(stage2_batch_size, "stage2_batch_size");
    positive(negatives, "negatives");
    positive(alternations, "alternations");
    if (stage1_epochs < 0 || stage2_epochs < 0) throw ConfigError("epoch counts must be non-negative");
    if (patch_size < FusionNet::kMinExtent) {
        throw ConfigError(fmt::format("patch_size must be at least {}", FusionNet::kMinExtent));
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0,1)");
    if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be positive");
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be finite and non-negative");
    if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be non-negative");
    if (layer_weights.size() != static_cast<std::size_t>(Backbone::kContrastiveTaps)) {
        throw ConfigError(fmt::format("layer_weights needs {} entries", Backbone::kContrastiveTaps));
    }
    for (double w : layer_weights)
        if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("layer_weights must be finite and non-negative");
}

TrainConfig TrainConfig::ivif() { return {}; }

TrainConfig TrainConfig::medical_pet() {
    TrainConfig c;
    c.mode = FusionMode::Medical;
    c.patch_count = 2662;
    c.stage1_epochs = 3;
    c.stage2_epochs = 1;
    c.batch_size = 30;
    c.stage2_batch_size = 10;
    return c;
}

TrainConfig TrainConfig::medical_spect() {
    TrainConfig c = medical_pet();
    c.patch_count = 4114;
    return c;
}

std::string to_string(FusionMode mode) { return mode == FusionMode::Medical ? "medical" : "ivif"; }

FusionMode parse_mode(const std::string& s) {
    if (s == "ivif") return FusionMode::Ivif;
    if (s == "medical") return FusionMode::Medical;
    throw ConfigError("mode must be 'ivif' or 'medical', got '" + s + "'");
}

nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json j = {
        {"patch_size", c.patch_size},       {"patch_count", c.patch_count},
        {"batch_size", c.batch_size},       {"stage2_batch_size", c.stage2_batch_size},
        {"learning_rate", c.learning_rate}, {"beta1", c.beta1},
        {"beta2", c.beta2},                 {"adam_epsilon", c.adam_epsilon},
        {"alpha", c.alpha},                 {"stage1_epochs", c.stage1_epochs},
        {"stage2_epochs", c.stage2_epochs}, {"negatives", c.negatives},
        {"alternations", c.alternations},   {"seed", c.seed},
        {"mode", to_string(c.mode)},        {"layer_weights", c.layer_weights},
        {"clip_norm", c.clip_norm},
    };
    j["stage1_max_steps"] = c.stage1_max_steps ? nlohmann::json(*c.stage1_max_steps) : nlohmann::json(nullptr);
    j["stage2_max_steps"] = c.stage2_max_steps ? nlohmann::json(*c.stage2_max_steps) : nlohmann::json(nullptr);
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
    if (!j.is_object()) throw ConfigError("training configuration must be an object");
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "patch_size") c.patch_size = value.get<int>();
            else if (key == "patch_count") c.patch_count = value.get<int>();
            else if (key == "batch_size") c.batch_size = value.get<int>();
            else if (key == "stage2_batch_size") c.stage2_batch_size = value.get<int>();
            else if (key == "learning_rate") c.learning_rate = value.get<double>();
            else if (key == "beta1") c.beta1 = value.get<double>();
            else if (key == "beta2") c.beta2 = value.get<double>();
            else if (key == "adam_epsilon") c.adam_epsilon = value.get<double>();
            else if (key == "alpha") c.alpha = value.get<double>();
            else if (key == "stage1_epochs") c.stage1_epochs = value.get<int>();
            else if (key == "stage2_epochs") c.stage2_epochs = value.get<int>();
            else if (key == "negatives") c.negatives = value.get<int>();
            else if (key == "alternations") c.alternations = value.get<int>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "mode") c.mode = parse_mode(value.get<std::string>());
            else if (key == "layer_weights") c.layer_weights = value.get<std::vector<double>>();
            else if (key == "clip_norm") c.clip_norm = value.get<double>();
            else if (key == "stage1_max_steps") {
                c.stage1_max_steps = value.is_null() ? std::nullopt : std::optional<std::size_t>(value.get<std::size_t>());
            } else if (key == "stage2_max_steps") {
                c.stage2_max_steps = value.is_null() ? std::nullopt : std::optional<std::size_t>(value.get<std::size_t>());
            } else {
                throw ConfigError("unknown training key '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad training configuration value: ") + e.what());
    }
    return c;
}

ContrastiveSamples build_contrastive_samples(const PatchSet& patches, const TrainConfig& cfg, std::uint64_t seed) {
    if (cfg.negatives < 1) throw ConfigError("at least one negative is required");
    ContrastiveSamples out;
    const std::size_t n = patches.patches.size();
    if (n == 0) return out;
    for (std::size_t i = 0; i < n; ++i)
        if (!patches.patches[i].mask) throw DataError(fmt::format("patch {} carries no mask", i));

    std::vector<std::vector<std::size_t>> by_pair;
    for (std::size_t i = 0; i < n; ++i) {
        const auto pi = static_cast<std::size_t>(patches.patches[i].pair_index);
        if (by_pair.size() <= pi) by_pair.resize(pi + 1);
        by_pair[pi].push_back(i);
    }
    const std::size_t pairs_present =
        static_cast<std::size_t>(std::count_if(by_pair.begin(), by_pair.end(), [](const auto& v) { return !v.empty(); }));
    const bool single_pair = pairs_present < 2;
    if (single_pair && cfg.negatives > 1) {
        out.warning = "single-pair corpus: extra negatives are drawn with replacement from the same pair";
    }

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> any(0, n - 1);
    out.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        ContrastiveSample s{i, {i}};
        const int own = patches.patches[i].pair_index;
        while (s.negatives.size() < static_cast<std::size_t>(cfg.negatives)) {
            const std::size_t j = any(rng);
            if (single_pair || patches.patches[j].pair_index != own) s.negatives.push_back(j);
        }
        out.samples.push_back(std::move(s));
    }
    return out;
}

void Adam::step(const std::vector<Param*>& params) {
    if (m_.empty()) {
        for (const Param* p : params) {
            m_.emplace_back(p->value.numel(), 0.0);
            v_.emplace_back(p->value.numel(), 0.0);
        }
    }
    if (m_.size() != params.size()) throw DataError("optimiser state does not match the parameter list");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& val = params[k]->value.values();
        const auto& g = params[k]->grad.values();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < val.size(); ++i) {
            m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
            v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
            val[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

std::vector<ArchiveArray> Adam::state_arrays(const std::vector<Param*>& params) const {
    std::vector<ArchiveArray> out;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const std::vector<std::int64_t> shape = {static_cast<std::int64_t>(params[k]->value.numel())};
        const std::size_t n = params[k]->value.numel();
        out.push_back({"adam.m." + params[k]->name, shape, m_.empty() ? std::vector<double>(n, 0.0) : m_[k]});
        out.push_back({"adam.v." + params[k]->name, shape, v_.empty() ? std::vector<double>(n, 0.0) : v_[k]});
    }
    return out;
}

void Adam::load_state(const Archive& archive, const std::vector<Param*>& params, std::size_t t) {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    for (const Param* p : params) {
        const auto* am = archive.find("adam.m." + p->name);
        const auto* av = archive.find("adam.v." + p->name);
        if (!am || !av || am->data.size() != p->value.numel() || av->data.size() != p->value.numel()) {
            throw DataError("checkpoint optimiser state for '" + p->name + "' missing or mis-sized");
        }
        m.push_back(am->data);
        v.push_back(av->data);
    }
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
}

std::string TrainingLog::to_csv() const {
    std::string out = loss_csv_header(mode) + "\n";
    for (const auto& r : rows) out += loss_csv_row(r.step, r.loss, r.weights) + "\n";
    return out;
}

Trainer::Trainer(FusionNet& model, const Backbone& backbone, TrainConfig cfg)
    : model_(model), backbone_(backbone), cfg_(std::move(cfg)),
      adam_(cfg_.learning_rate, cfg_.beta1, cfg_.beta2, cfg_.adam_epsilon) {
    cfg_.validate();
    log_.mode = cfg_.mode;
}

std::size_t Trainer::planned_steps(int stage) const {
    const int batch = stage == 1 ? cfg_.batch_size : cfg_.stage2_batch_size;
    const int epochs = stage == 1 ? cfg_.stage1_epochs : cfg_.stage2_epochs;
    const std::size_t per_epoch = static_cast<std::size_t>((cfg_.patch_count + batch - 1) / batch);
    std::size_t steps = per_epoch * static_cast<std::size_t>(epochs);
    const auto& cap = stage == 1 ? cfg_.stage1_max_steps : cfg_.stage2_max_steps;
    if (cap) steps = std::min(steps, *cap);
    return steps;
}

TrainingLog Trainer::train_stage1(std::span<const SourcePair> corpus) { return run_stage(corpus, 1); }

TrainingLog Trainer::finetune_stage2(std::span<const SourcePair> corpus) {
    for (const auto& pair : corpus)
        if (!pair.mask) throw DataError("pair '" + pair.id + "' has no saliency mask; fine-tuning needs one for every pair");
    return run_stage(corpus, 2);
}

TrainingLog Trainer::run(std::span<const SourcePair> corpus, bool stage1_only) {
    TrainingLog all;
    all.mode = cfg_.mode;
    for (int a = 0; a < cfg_.alternations; ++a) {
        auto s1 = train_stage1(corpus);
        all.rows.insert(all.rows.end(), s1.rows.begin(), s1.rows.end());
        if (stage1_only) continue;
        auto s2 = finetune_stage2(corpus);
        all.rows.insert(all.rows.end(), s2.rows.begin(), s2.rows.end());
    }
    return all;
}

namespace {

Tensor stack(const std::vector<const ImagePlane*>& planes) {
    const int p = planes.front()->rows();
    Tensor t(Shape{static_cast<int>(planes.size()), 1, p, planes.front()->cols()});
    for (std::size_t i = 0; i < planes.size(); ++i) {
        const auto s = normalize(*planes[i], RangeTag::Signed);
        std::copy(s.data().begin(), s.data().end(), t.sample(static_cast<int>(i)).begin());
    }
    return t;
}

double global_norm(const std::vector<Param*>& params) {
    double sq = 0.0;
    for (const Param* p : params)
        for (double g : p->grad.values()) sq += g * g;
    return std::sqrt(sq);
}

} // namespace

TrainingLog Trainer::run_stage(std::span<const SourcePair> corpus, int stage) {
    if (corpus.empty()) throw DataError("training corpus is empty");
    TrainingLog out;
    out.mode = cfg_.mode;
    const std::size_t total = planned_steps(stage);
    if (total == 0) return out;

    const PatchSet patches = crop_patches(corpus, cfg_.patch_size, cfg_.patch_count, cfg_.seed);
    std::vector<AdaptiveWeights> patch_weights;
    patch_weights.reserve(patches.patches.size());
    for (const auto& p : patches.patches) {
        const auto& src = corpus[static_cast<std::size_t>(p.pair_index)];
        patch_weights.push_back(compute_patch_weights(p.vis, p.ir, src.vis, src.ir));
    }
    ContrastiveSamples samples;
    if (stage == 2) {
        samples = build_contrastive_samples(patches, cfg_, cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
    }

    const int batch = stage == 1 ? cfg_.batch_size : cfg_.stage2_batch_size;
    const int epochs = stage == 1 ? cfg_.stage1_epochs : cfg_.stage2_epochs;
    const bool medical = cfg_.mode == FusionMode::Medical;
    std::mt19937_64 order_rng(cfg_.seed);
    std::vector<std::size_t> order(patches.patches.size());
    const std::vector<Param*> params = model_.params();
    LossOptions options;
    options.alpha = cfg_.alpha;
    options.layer_weights = cfg_.layer_weights;
    options.stage1 = stage == 1;

    std::size_t done = 0;
    for (int epoch = 1; epoch <= epochs && done < total; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), order_rng);
        for (std::size_t start = 0; start < order.size() && done < total; start += static_cast<std::size_t>(batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch));
            std::vector<const ImagePlane*> ir;
            std::vector<const ImagePlane*> vis;
            std::vector<AdaptiveWeights> weights;
            AdaptiveWeights mean_w{0.0, 0.0, 0.0, 0.0};
            for (std::size_t k = start; k < end; ++k) {
                const auto& p = patches.patches[order[k]];
                ir.push_back(&p.ir);
                vis.push_back(&p.vis);
                const auto& w = patch_weights[order[k]];
                weights.push_back(w);
                const double inv = 1.0 / static_cast<double>(end - start);
                mean_w.sigma_a += w.sigma_a * inv;
                mean_w.sigma_b += w.sigma_b * inv;
                mean_w.gamma_a += w.gamma_a * inv;
                mean_w.gamma_b += w.gamma_b * inv;
            }
            const Tensor t_ir = stack(ir);
            const Tensor t_vis = stack(vis);

            ContrastiveInputs ci;
            if (stage == 2) {
                const Tensor& structural = medical ? t_vis : t_ir;
                const Tensor& other = medical ? t_ir : t_vis;
                ci.first = structural;
                ci.second = other;
                ci.mask = Tensor(t_ir.shape());
                for (std::size_t k = start; k < end; ++k) {
                    const auto& bits = patches.patches[order[k]].mask->bits();
                    auto dst = ci.mask.sample(static_cast<int>(k - start));
                    for (std::size_t i = 0; i < bits.size(); ++i) dst[i] = bits[i];
                }
                for (int m = 0; m < cfg_.negatives; ++m) {
                    std::vector<const ImagePlane*> neg_ir;
                    std::vector<const ImagePlane*> neg_vis;
                    for (std::size_t k = start; k < end; ++k) {
                        const auto& p = patches.patches[samples.samples[order[k]].negatives[static_cast<std::size_t>(m)]];
                        neg_ir.push_back(&p.ir);
                        neg_vis.push_back(&p.vis);
                    }
                    Tensor n_ir = stack(neg_ir);
                    Tensor n_vis = stack(neg_vis);
                    ci.first_negatives.push_back(medical ? std::move(n_ir) : std::move(n_vis));
                    ci.second_negatives.push_back(medical ? std::move(n_vis) : std::move(n_ir));
                }
            }

            model_.zero_grad();
            const Tensor fused = model_.forward(backbone_, t_ir, t_vis, true);
            LossEvaluation eval =
                total_loss(&backbone_, t_vis, t_ir, fused, weights, stage == 2 ? &ci : nullptr, options, true);
            const LossBreakdown& b = eval.breakdown;
            const std::size_t step_no = adam_.steps() + 1;
            if (!std::isfinite(b.l_total)) {
                throw NumericError(fmt::format("non-finite loss at step {} (stage {})", step_no, stage));
            }
            model_.backward(eval.grad_f);
            const double norm = global_norm(params);
            if (!std::isfinite(norm)) throw NumericError(fmt::format("non-finite gradient at step {} (stage {})", step_no, stage));
            if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) {
                const double s = cfg_.clip_norm / norm;
                for (Param* p : params) p->grad.scale(s);
            }
            adam_.step(params);
            ++done;
            LogRow row{adam_.steps(), stage, b, mean_w};
            out.rows.push_back(row);
            log_.rows.push_back(row);
            if (on_step_) on_step_(row);
        }
        write_epoch_outputs(corpus, stage, epoch);
    }
    return out;
}

Archive checkpoint_archive(FusionNet& model, const Adam* adam, std::size_t step, const TrainConfig& cfg) {
    Archive a;
    a.kind = "coconet-checkpoint";
    a.version = kCheckpointVersion;
    a.metadata = {
        {"step", step},
        {"seed", model.seed()},
        {"alpha", cfg.alpha},
        {"disable_ca", model.config().disable_ca},
        {"disable_backbone_taps", model.config().disable_backbone_taps},
        {"parameter_count", model.parameter_count()},
        {"config", to_json(cfg)},
    };
    a.arrays = model.state_arrays();
    if (adam) {
        auto opt = adam->state_arrays(model.params());
        a.arrays.insert(a.arrays.end(), std::make_move_iterator(opt.begin()), std::make_move_iterator(opt.end()));
    }
    return a;
}

namespace {

Archive read_checkpoint(const std::filesystem::path& path) {
    Archive a = read_archive(path);
    if (a.kind != "coconet-checkpoint") throw DataError(path.string() + ": not a checkpoint (kind '" + a.kind + "')");
    if (a.version > kCheckpointVersion) {
        throw DataError(fmt::format("{}: checkpoint version {} is newer than supported version {}", path.string(), a.version,
                                    kCheckpointVersion));
    }
    return a;
}

FusionNet model_from(const Archive& a) {
    FusionConfig fc;
    std::uint64_t seed = 0;
    try {
        fc.disable_ca = a.metadata.at("disable_ca").get<bool>();
        fc.disable_backbone_taps = a.metadata.at("disable_backbone_taps").get<bool>();
        seed = a.metadata.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint metadata incomplete: ") + e.what());
    }
    FusionNet model(fc, seed);
    model.load_state_arrays(a);
    return model;
}

} // namespace

FusionNet load_model(const std::filesystem::path& path) { return model_from(read_checkpoint(path)); }

void Trainer::save_checkpoint(const std::filesystem::path& path) {
    write_archive(path, checkpoint_archive(model_, &adam_, adam_.steps(), cfg_));
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
    const Archive a = read_checkpoint(path);
    FusionNet restored = model_from(a);
    if (restored.config().disable_ca != model_.config().disable_ca ||
        restored.config().disable_backbone_taps != model_.config().disable_backbone_taps) {
        throw DataError(path.string() + ": checkpoint architecture flags differ from the model");
    }
    model_.load_state_arrays(a);
    adam_.load_state(a, model_.params(), a.metadata.value("step", std::size_t{0}));
}

std::uint32_t corpus_hash(std::span<const SourcePair> corpus) {
    std::vector<std::uint32_t> parts;
    for (const auto& p : corpus) {
        parts.push_back(crc32_of(p.id.data(), p.id.size()));
        parts.push_back(crc32_of(p.ir.data().data(), p.ir.size() * sizeof(double)));
        parts.push_back(crc32_of(p.vis.data().data(), p.vis.size() * sizeof(double)));
        if (p.mask) parts.push_back(crc32_of(p.mask->bits().data(), p.mask->bits().size()));
    }
    return crc32_of(parts.data(), parts.size() * sizeof(std::uint32_t));
}

void Trainer::write_epoch_outputs(std::span<const SourcePair> corpus, int stage, int epoch) {
    if (!output_dir_) return;
    std::filesystem::create_directories(*output_dir_);
    const std::string stem = fmt::format("stage{}_epoch{:03d}", stage, epoch);
    const auto ckpt = *output_dir_ / (stem + ".ckpt");
    save_checkpoint(ckpt);
    save_checkpoint(*output_dir_ / "latest.ckpt");
    const nlohmann::json manifest = {
        {"checkpoint", ckpt.filename().string()},
        {"stage", stage},
        {"epoch", epoch},
        {"step", adam_.steps()},
        {"seed", cfg_.seed},
        {"corpus_hash", fmt::format("{:08x}", corpus_hash(corpus))},
        {"corpus_pairs", corpus.size()},
        {"backbone_hash", fmt::format("{:08x}", backbone_.parameter_hash())},
        {"config", to_json(cfg_)},
    };
    write_file_atomic(*output_dir_ / (stem + ".json"), manifest.dump(2) + "\n");
    write_file_atomic(*output_dir_ / "training_log.csv", log_.to_csv());
}

} // namespace coconet
