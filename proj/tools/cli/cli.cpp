#include "cli/cli.hpp"

#include <coconet/backbone.hpp>
#include <coconet/error.hpp>
#include <coconet/fusion_net.hpp>
#include <coconet/image_io.hpp>
#include <coconet/medical.hpp>
#include <coconet/metrics.hpp>

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

namespace coconet::cli {

namespace fs = std::filesystem;

namespace {

bool is_raster(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".tif" || ext == ".tiff";
}

void require_dir(const fs::path& dir, const std::string& what) {
    if (!fs::is_directory(dir)) throw DataError(what + " directory not found: " + dir.string());
}

// stem -> file, rejecting duplicate stems
std::map<std::string, fs::path> index_by_stem(const fs::path& dir) {
    std::map<std::string, fs::path> out;
    for (const auto& p : list_rasters(dir)) {
        const auto [it, fresh] = out.emplace(p.stem().string(), p);
        if (!fresh) throw DataError("ambiguous raster name '" + p.stem().string() + "' in " + dir.string());
    }
    return out;
}

const fs::path& partner(const std::map<std::string, fs::path>& index, const fs::path& file, const fs::path& dir) {
    const auto it = index.find(file.stem().string());
    if (it == index.end()) throw DataError("no counterpart for " + file.filename().string() + " in " + dir.string());
    return it->second;
}

ImagePlane functional_luma(const fs::path& p) {
    if (is_grayscale_raster(p)) return load_grayscale(p);
    return rgb_to_ycbcr(load_color(p)).y;
}

fs::path resolve(const fs::path& p, const fs::path& base) {
    if (p.empty() || p.is_absolute() || base.empty()) return p;
    return base / p;
}

Backbone make_backbone(const std::string& spec) {
    if (spec.rfind("deterministic", 0) != 0 && !fs::exists(spec)) throw DataError("backbone weights not found: " + spec);
    return Backbone::from_spec(spec);
}

std::size_t worker_count(bool deterministic, std::size_t items) {
    if (deterministic) return 1;
    const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    return std::max<std::size_t>(1, std::min(hw, items));
}

// Runs job(i) for every item; results land in input order.
template <typename R>
std::vector<R> run_ordered(std::size_t items, bool deterministic, const std::function<R(std::size_t)>& job) {
    std::vector<std::optional<R>> slots(items);
    const std::size_t workers = worker_count(deterministic, items);
    if (workers <= 1) {
        for (std::size_t i = 0; i < items; ++i) slots[i] = job(i);
    } else {
        std::vector<std::future<void>> tasks;
        for (std::size_t w = 0; w < workers; ++w) {
            tasks.push_back(std::async(std::launch::async, [&, w] {
                for (std::size_t i = w; i < items; i += workers) slots[i] = job(i);
            }));
        }
        for (auto& t : tasks) t.get(); // rethrows the first failure
    }
    std::vector<R> out;
    out.reserve(items);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

// ---------------------------------------------------------------- train

struct TrainFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool deterministic = false;
    bool stage1_only = false;
    bool disable_ca = false;
    bool disable_backbone_taps = false;
};

int cmd_train(const TrainFlags& flags, std::ostream& out, std::ostream& err) {
    RunConfig cfg = load_run_config(flags.config);
    if (flags.seed) cfg.train.seed = *flags.seed;
    if (!flags.out.empty()) cfg.output_dir = flags.out;
    cfg.deterministic |= flags.deterministic;
    cfg.stage1_only |= flags.stage1_only;
    cfg.disable_ca |= flags.disable_ca;
    cfg.disable_backbone_taps |= flags.disable_backbone_taps;
    cfg.train.validate();
    validate_paths(cfg);

    const std::vector<SourcePair> corpus = load_corpus(cfg, !cfg.stage1_only);
    const Backbone backbone = make_backbone(cfg.weights);
    FusionNet model({cfg.disable_ca, cfg.disable_backbone_taps}, cfg.train.seed);
    Trainer trainer(model, backbone, cfg.train);
    trainer.set_output_dir(cfg.output_dir);
    fs::create_directories(cfg.output_dir);
    write_file_atomic(cfg.output_dir / "run_config.json", to_json(cfg).dump(2) + "\n");

    out << fmt::format("training on {} pairs, {} + {} steps\n", corpus.size(), trainer.planned_steps(1),
                       cfg.stage1_only ? 0 : trainer.planned_steps(2));
    try {
        trainer.run(corpus, cfg.stage1_only);
    } catch (...) {
        // keep what was logged up to the failure
        write_file_atomic(cfg.output_dir / "training_log.csv", trainer.log().to_csv());
        throw;
    }
    write_file_atomic(cfg.output_dir / "training_log.csv", trainer.log().to_csv());
    trainer.save_checkpoint(cfg.output_dir / "final.ckpt");
    out << "checkpoint: " << (cfg.output_dir / "final.ckpt").string() << "\n";
    (void)err;
    return kOk;
}

// ---------------------------------------------------------------- fuse

struct FuseFlags {
    std::string checkpoint;
    std::string weights = "deterministic";
    std::string ir;
    std::string vis;
    std::string out;
    bool deterministic = false;
};

int cmd_fuse(const FuseFlags& f, std::ostream& out) {
    const FusionNet model = load_model(f.checkpoint);
    const Backbone backbone = make_backbone(f.weights);
    if (fs::is_directory(f.ir) || fs::is_directory(f.vis)) {
        require_dir(f.ir, "infrared");
        require_dir(f.vis, "visible");
        const auto irs = list_rasters(f.ir);
        const auto vis_index = index_by_stem(f.vis);
        std::vector<fs::path> vis;
        for (const auto& p : irs) vis.push_back(partner(vis_index, p, f.vis));
        fs::create_directories(f.out);
        run_ordered<int>(irs.size(), f.deterministic, [&](std::size_t i) {
            const ImagePlane fused = model.forward_fuse(backbone, load_grayscale(irs[i]), load_grayscale(vis[i]));
            save_grayscale(fs::path(f.out) / irs[i].filename(), fused);
            return 0;
        });
        out << fmt::format("fused {} pairs into {}\n", irs.size(), f.out);
        return kOk;
    }
    const ImagePlane fused = model.forward_fuse(backbone, load_grayscale(f.ir), load_grayscale(f.vis));
    save_grayscale(f.out, fused);
    out << "wrote " << f.out << "\n";
    return kOk;
}

struct MedicalFlags {
    std::string checkpoint;
    std::string weights = "deterministic";
    std::string mri;
    std::string functional;
    std::string out;
};

int cmd_fuse_medical(const MedicalFlags& f, std::ostream& out) {
    const FusionNet model = load_model(f.checkpoint);
    const Backbone backbone = make_backbone(f.weights);
    const ImagePlane mri = load_grayscale(f.mri);
    if (is_grayscale_raster(f.functional)) {
        const ImagePlane fun = load_grayscale(f.functional);
        if (!fun.same_shape(mri)) {
            throw DataError(fmt::format("functional image is {}x{}, MRI is {}x{}", fun.rows(), fun.cols(), mri.rows(), mri.cols()));
        }
        save_grayscale(f.out, fuse_medical_gray(model, backbone, mri, fun));
        out << "wrote " << f.out << " (grayscale functional input)\n";
        return kOk;
    }
    const MedicalFusion fused = fuse_medical(model, backbone, mri, load_color(f.functional));
    save_color(f.out, fused.rgb);
    out << "wrote " << f.out << "\n";
    return kOk;
}

// ---------------------------------------------------------------- evaluate

constexpr int kMetricCount = 6;
const char* const kMetricNames[kMetricCount] = {"EN", "AG", "SF", "SD", "SCD", "VIF"};

struct MetricRow {
    std::string id;
    std::optional<double> values[kMetricCount];
};

MetricRow measure(const std::string& id, const ImagePlane& v, const ImagePlane& r, const ImagePlane& f) {
    if (!v.same_shape(f) || !r.same_shape(f)) throw DataError("triple '" + id + "': sources and fused image differ in shape");
    MetricRow row{id, {}};
    const std::function<double()> metrics[kMetricCount] = {
        [&] { return entropy(f); },
        [&] { return average_gradient(f); },
        [&] { return spatial_frequency(f); },
        [&] { return standard_deviation(f); },
        [&] { return scd(v, r, f); },
        [&] { return vif_fusion(v, r, f); },
    };
    for (int k = 0; k < kMetricCount; ++k) {
        try {
            row.values[k] = metrics[k]();
        } catch (const MetricError&) {
        }
    }
    return row;
}

std::string format_row(const MetricRow& row) {
    std::string s = row.id;
    for (int k = 0; k < kMetricCount; ++k) {
        s += ',';
        s += row.values[k] ? fmt::format("{:.6f}", *row.values[k]) : std::string("ERR:") + kMetricNames[k];
    }
    return s;
}

std::string summary_row(const std::vector<MetricRow>& rows) {
    std::string s = "mean±std";
    for (int k = 0; k < kMetricCount; ++k) {
        std::vector<double> xs;
        for (const auto& r : rows)
            if (r.values[k]) xs.push_back(*r.values[k]);
        s += ',';
        if (xs.empty()) {
            s += std::string("ERR:") + kMetricNames[k];
            continue;
        }
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        double var = 0.0;
        for (double x : xs) var += (x - mean) * (x - mean);
        const double sd = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
        s += fmt::format("{:.6f}±{:.6f}", mean, sd);
    }
    return s;
}

struct TripleFiles {
    std::string id;
    fs::path v, r, f;
};

std::vector<TripleFiles> triples_from_list(const fs::path& list) {
    std::ifstream in(list);
    if (!in) throw DataError("cannot read triple list: " + list.string());
    std::vector<TripleFiles> out;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        if (cells.size() != 4) throw DataError(fmt::format("{}:{}: expected id,visible,infrared,fused", list.string(), n));
        const fs::path base = list.parent_path();
        out.push_back({cells[0], resolve(cells[1], base), resolve(cells[2], base), resolve(cells[3], base)});
    }
    return out;
}

std::vector<TripleFiles> triples_from_dirs(const fs::path& vis, const fs::path& ir, const fs::path& fused) {
    require_dir(vis, "visible");
    require_dir(ir, "infrared");
    require_dir(fused, "fused");
    const auto vis_index = index_by_stem(vis);
    const auto ir_index = index_by_stem(ir);
    std::vector<TripleFiles> out;
    for (const auto& f : list_rasters(fused)) {
        out.push_back({f.stem().string(), partner(vis_index, f, vis), partner(ir_index, f, ir), f});
    }
    return out;
}

struct EvaluateFlags {
    std::string list;
    std::string vis;
    std::string ir;
    std::string fused;
    std::string out;
    bool deterministic = false;
};

int cmd_evaluate(const EvaluateFlags& f, std::ostream& out, std::ostream& err) {
    std::vector<TripleFiles> triples;
    if (!f.list.empty()) {
        triples = triples_from_list(f.list);
    } else {
        if (f.vis.empty() || f.ir.empty() || f.fused.empty()) {
            throw ConfigError("evaluate needs --list or all of --vis, --ir and --fused");
        }
        triples = triples_from_dirs(f.vis, f.ir, f.fused);
    }
    if (triples.empty()) throw DataError("no triples to evaluate");
    const auto rows = run_ordered<MetricRow>(triples.size(), f.deterministic, [&](std::size_t i) {
        const auto& t = triples[i];
        return measure(t.id, load_grayscale(t.v), load_grayscale(t.r), load_grayscale(t.f));
    });
    std::string csv = csv_header() + "\n";
    for (const auto& r : rows) {
        csv += format_row(r) + "\n";
        for (int k = 0; k < kMetricCount; ++k)
            if (!r.values[k]) err << "warning: " << kMetricNames[k] << " undefined for " << r.id << "\n";
    }
    csv += summary_row(rows) + "\n";
    write_file_atomic(f.out, csv);
    out << fmt::format("evaluated {} triples into {}\n", rows.size(), f.out);
    return kOk;
}

// ---------------------------------------------------------------- mask-gen

struct MaskFlags {
    std::string ir;
    double quantile = 0.9;
    std::string out;
    bool largest = false;
};

int cmd_mask_gen(const MaskFlags& f, std::ostream& out, std::ostream& err) {
    if (!(f.quantile >= 0.0 && f.quantile < 1.0)) {
        throw ConfigError(fmt::format("--quantile must lie in [0, 1), got {}", f.quantile));
    }
    std::vector<fs::path> inputs;
    if (fs::is_directory(f.ir)) {
        inputs = list_rasters(f.ir);
    } else {
        if (!fs::exists(f.ir)) throw DataError("no such file or directory: " + f.ir);
        inputs.push_back(f.ir);
    }
    fs::create_directories(f.out);
    for (const auto& p : inputs) {
        const MaskResult m = threshold_saliency_mask(load_grayscale(p), f.quantile, f.largest);
        if (m.warning) err << "warning: " << p.filename().string() << ": " << *m.warning << "\n";
        fs::path target = fs::path(f.out) / p.filename();
        target.replace_extension(".png");
        save_mask(target, m.mask);
    }
    out << fmt::format("wrote {} masks into {}\n", inputs.size(), f.out);
    return kOk;
}

int exit_code(const Error& e) {
    switch (e.kind()) {
    case ErrorKind::Config: return kConfig;
    case ErrorKind::Data: return kData;
    case ErrorKind::Numeric: return kNumeric;
    }
    return kFailure;
}

} // namespace

std::vector<fs::path> list_rasters(const fs::path& dir) {
    require_dir(dir, "input");
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_raster(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw ConfigError("run configuration must be a JSON object");
    RunConfig cfg;
    nlohmann::json train = nlohmann::json::object();
    if (j.contains("preset")) {
        const std::string p = j["preset"].is_string() ? j["preset"].get<std::string>() : "";
        if (p == "ivif") cfg.train = TrainConfig::ivif();
        else if (p == "medical_pet") cfg.train = TrainConfig::medical_pet();
        else if (p == "medical_spect") cfg.train = TrainConfig::medical_spect();
        else throw ConfigError("unknown preset '" + j["preset"].dump() + "'");
    }
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "preset") continue;
            if (key == "corpus_dir") cfg.corpus_dir = resolve(value.get<std::string>(), base_dir);
            else if (key == "mask_dir") cfg.mask_dir = resolve(value.get<std::string>(), base_dir);
            else if (key == "output_dir") cfg.output_dir = resolve(value.get<std::string>(), base_dir);
            else if (key == "weights") {
                cfg.weights = value.get<std::string>();
                if (cfg.weights.rfind("deterministic", 0) != 0) cfg.weights = resolve(cfg.weights, base_dir).string();
            }
            else if (key == "deterministic") cfg.deterministic = value.get<bool>();
            else if (key == "stage1_only") cfg.stage1_only = value.get<bool>();
            else if (key == "disable_ca") cfg.disable_ca = value.get<bool>();
            else if (key == "disable_backbone_taps") cfg.disable_backbone_taps = value.get<bool>();
            else train[key] = value;
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad run configuration value: ") + e.what());
    }
    cfg.train = train_config_from_json(train, cfg.train);
    return cfg;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read configuration file: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j, path.parent_path());
}

nlohmann::json to_json(const RunConfig& cfg) {
    nlohmann::json j = coconet::to_json(cfg.train);
    j["corpus_dir"] = cfg.corpus_dir.string();
    j["mask_dir"] = cfg.mask_dir.string();
    j["output_dir"] = cfg.output_dir.string();
    j["weights"] = cfg.weights;
    j["deterministic"] = cfg.deterministic;
    j["stage1_only"] = cfg.stage1_only;
    j["disable_ca"] = cfg.disable_ca;
    j["disable_backbone_taps"] = cfg.disable_backbone_taps;
    return j;
}

void validate_paths(const RunConfig& cfg) {
    if (cfg.corpus_dir.empty()) throw ConfigError("corpus_dir is required");
    if (cfg.output_dir.empty()) throw ConfigError("output_dir is required (config key or --out)");
    require_dir(cfg.corpus_dir, "corpus");
    const bool medical = cfg.train.mode == FusionMode::Medical;
    require_dir(cfg.corpus_dir / (medical ? "mri" : "ir"), medical ? "MRI" : "infrared");
    require_dir(cfg.corpus_dir / (medical ? "functional" : "vis"), medical ? "functional" : "visible");
    if (!cfg.stage1_only) {
        require_dir(cfg.mask_dir.empty() ? cfg.corpus_dir / "masks" : cfg.mask_dir, "mask");
    }
    if (cfg.weights.rfind("deterministic", 0) != 0 && !fs::is_regular_file(cfg.weights)) {
        throw DataError("backbone weights not found: " + cfg.weights);
    }
    if (fs::exists(cfg.output_dir) && !fs::is_directory(cfg.output_dir)) {
        throw DataError("output path exists and is not a directory: " + cfg.output_dir.string());
    }
}

std::vector<SourcePair> load_corpus(const RunConfig& cfg, bool with_masks) {
    const bool medical = cfg.train.mode == FusionMode::Medical;
    // ir slot: infrared or functional luminance; vis slot: visible or MRI
    const fs::path ir_dir = cfg.corpus_dir / (medical ? "functional" : "ir");
    const fs::path vis_dir = cfg.corpus_dir / (medical ? "mri" : "vis");
    const fs::path mask_dir = cfg.mask_dir.empty() ? cfg.corpus_dir / "masks" : cfg.mask_dir;
    const auto vis_index = index_by_stem(vis_dir);
    std::map<std::string, fs::path> mask_index;
    if (with_masks) mask_index = index_by_stem(mask_dir);
    else if (fs::is_directory(mask_dir)) mask_index = index_by_stem(mask_dir);

    std::vector<SourcePair> corpus;
    for (const auto& p : list_rasters(ir_dir)) {
        const fs::path& v = partner(vis_index, p, vis_dir);
        SourcePair pair{p.stem().string(), medical ? functional_luma(p) : load_grayscale(p), load_grayscale(v), std::nullopt};
        if (!pair.ir.same_shape(pair.vis)) {
            throw DataError(fmt::format("pair '{}': {}x{} vs {}x{}", pair.id, pair.ir.rows(), pair.ir.cols(), pair.vis.rows(),
                                        pair.vis.cols()));
        }
        const auto m = mask_index.find(pair.id);
        if (m != mask_index.end()) pair.mask = load_mask(m->second, pair.ir);
        else if (with_masks) throw DataError("no mask for pair '" + pair.id + "' in " + mask_dir.string());
        corpus.push_back(std::move(pair));
    }
    if (corpus.empty()) throw DataError("no source pairs found in " + ir_dir.string());
    return corpus;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Infrared/visible and medical image fusion"};
    app.require_subcommand(1);

    TrainFlags train;
    auto* t = app.add_subcommand("train", "two-stage training from a JSON run configuration");
    t->add_option("--config", train.config, "run configuration file")->required();
    t->add_option("--seed", train.seed, "overrides the configured seed");
    t->add_option("--out", train.out, "overrides output_dir");
    t->add_flag("--deterministic", train.deterministic, "serial, bit-reproducible execution");
    t->add_flag("--stage1-only", train.stage1_only, "skip contrastive fine-tuning");
    t->add_flag("--disable-ca", train.disable_ca, "replace channel attention by identity");
    t->add_flag("--disable-backbone-taps", train.disable_backbone_taps, "feed zeros instead of backbone features");

    FuseFlags fuse;
    auto* fu = app.add_subcommand("fuse", "fuse an infrared/visible pair, or two directories of pairs");
    fu->add_option("--checkpoint", fuse.checkpoint)->required();
    fu->add_option("--weights", fuse.weights, "backbone weights file or 'deterministic'");
    fu->add_option("--ir", fuse.ir)->required();
    fu->add_option("--vis", fuse.vis)->required();
    fu->add_option("--out", fuse.out)->required();
    fu->add_flag("--deterministic", fuse.deterministic);

    MedicalFlags med;
    auto* md = app.add_subcommand("fuse-medical", "fuse an MRI with a PET/SPECT scan on the luminance channel");
    md->add_option("--checkpoint", med.checkpoint)->required();
    md->add_option("--weights", med.weights, "backbone weights file or 'deterministic'");
    md->add_option("--mri", med.mri)->required();
    md->add_option("--functional", med.functional)->required();
    md->add_option("--out", med.out)->required();

    EvaluateFlags ev;
    auto* e = app.add_subcommand("evaluate", "EN, AG, SF, SD, SCD and VIF of fused images");
    e->add_option("--list", ev.list, "CSV lines: id,visible,infrared,fused");
    e->add_option("--vis", ev.vis, "visible directory");
    e->add_option("--ir", ev.ir, "infrared directory");
    e->add_option("--fused", ev.fused, "fused directory (defines the pair ids)");
    e->add_option("--out", ev.out, "output CSV")->required();
    e->add_flag("--deterministic", ev.deterministic);

    MaskFlags mask;
    auto* m = app.add_subcommand("mask-gen", "threshold infrared images into saliency masks");
    m->add_option("--ir", mask.ir, "infrared file or directory")->required();
    m->add_option("--quantile", mask.quantile, "intensity quantile in [0, 1)");
    m->add_option("--out", mask.out, "mask directory")->required();
    m->add_flag("--largest-component", mask.largest, "keep only the largest connected region");

    std::vector<std::string> argv_store{"coconet"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& pe) {
        const int code = app.exit(pe, out, err);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*t) return cmd_train(train, out, err);
        if (*fu) return cmd_fuse(fuse, out);
        if (*md) return cmd_fuse_medical(med, out);
        if (*e) return cmd_evaluate(ev, out, err);
        if (*m) return cmd_mask_gen(mask, out, err);
    } catch (const Error& ex) {
        err << "error: " << ex.what() << "\n";
        return exit_code(ex);
    } catch (const fs::filesystem_error& ex) {
        err << "error: " << ex.what() << "\n";
        return kData;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kFailure;
    }
    return kFailure;
}

} // namespace coconet::cli
