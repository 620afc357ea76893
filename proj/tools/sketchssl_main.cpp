// sketchssl command line: synth | prepare | train | embed | evaluate |
// visualize | query | render. Every subcommand accepts --config <json> plus
// --set key.path=value overrides. Exit codes: 0 ok, 1 user error, 2 internal.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "sketchssl/config.hpp"
#include "sketchssl/eval.hpp"
#include "sketchssl/image_io.hpp"
#include "sketchssl/models.hpp"
#include "sketchssl/synth.hpp"
#include "sketchssl/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sketchssl;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required) {
    auto* copt = cmd->add_option("--config", args.config_path, "experiment config JSON");
    if (config_required) copt->required();
    cmd->add_option("--set", args.overrides, "override config keys (a.b.c=value)");
}

ExperimentConfig load_config(const CommonArgs& args) {
    if (args.config_path.empty())
        return ExperimentConfig::from_json_text("{}", args.overrides);
    return ExperimentConfig::load(args.config_path, args.overrides);
}

std::string default_manifest_path(const ExperimentConfig& cfg) {
    return (fs::path(cfg.out_dir()) / "manifest.json").string();
}

std::string manifest_file_hash(const SplitManifest& m) {
    SplitManifest copy = m;
    copy.config_hash.clear();  // hash covers the selection, not the fingerprint field
    return hash_string(copy.to_json());
}

int cmd_synth(const CommonArgs& common, const std::string& out, int classes,
              int per_class, std::uint64_t seed) {
    (void)load_config(common);  // validated for syntax if supplied
    synth::write_dataset(out, classes, per_class, seed);
    std::cout << "wrote " << classes << " categories x " << per_class << " to " << out
              << "\n";
    return 0;
}

int cmd_prepare(const CommonArgs& common, const std::string& manifest_out) {
    ExperimentConfig cfg = load_config(common);
    if (cfg.data_dir().empty()) throw ConfigError("config data.dir is required");
    SplitManifest manifest = build_manifest(scan_data_dir(cfg.data_dir()), cfg.split_spec());
    manifest.config_hash = cfg.hash();
    const std::string path =
        manifest_out.empty() ? default_manifest_path(cfg) : manifest_out;
    fs::create_directories(fs::path(path).parent_path());
    manifest.save(path);
    std::cout << "manifest: " << path << " (" << manifest.records.size() << " records)\n";
    return 0;
}

int cmd_train(const CommonArgs& common, const std::string& manifest_path) {
    ExperimentConfig cfg = load_config(common);
    const std::string mpath =
        manifest_path.empty() ? default_manifest_path(cfg) : manifest_path;
    SplitManifest manifest = SplitManifest::load(mpath);
    DatasetSplit split = load_split(manifest, cfg.data_dir());
    RunMeta meta;
    meta.config_hash = cfg.hash();
    meta.manifest_hash = manifest_file_hash(manifest);
    meta.out_dir = cfg.out_dir();
    meta.keep_step_records = false;
    TrainResult res = train(split, cfg.train_config(), meta);
    std::cout << "final: " << res.final_checkpoint << "\nbest: " << res.best_checkpoint
              << "\n";
    return 0;
}

const std::vector<SketchRecord>& split_part(const DatasetSplit& split,
                                            const std::string& name) {
    if (name == "train") return split.train;
    if (name == "test_known") return split.test_known;
    if (name == "test_unknown") return split.test_unknown;
    throw ConfigError("unknown split part: " + name);
}

int cmd_embed(const CommonArgs& common, const std::string& checkpoint,
              const std::string& split_name, const std::string& out,
              const std::string& manifest_path) {
    ExperimentConfig cfg = load_config(common);
    const std::string mpath =
        manifest_path.empty() ? default_manifest_path(cfg) : manifest_path;
    SplitManifest manifest = SplitManifest::load(mpath);
    DatasetSplit split = load_split(manifest, cfg.data_dir());
    auto model = load_checkpoint(checkpoint);
    EmbeddingMatrix em = extract_embeddings(*model, split_part(split, split_name));
    em.split_name = split_name;
    em.config_hash = model->cfg.config_hash;
    em.manifest_hash = model->cfg.manifest_hash;
    fs::create_directories(fs::path(out).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(out).parent_path());
    em.save(out);
    std::cout << "embeddings: " << out << " (" << em.n << " x " << em.d << ")\n";
    return 0;
}

int cmd_evaluate(const CommonArgs& common, const std::string& checkpoint,
                 const std::string& manifest_path, const std::string& report_out,
                 bool force) {
    ExperimentConfig cfg = load_config(common);
    if (checkpoint.empty())
        throw ConfigError("evaluate: --checkpoint is required");
    const std::string mpath =
        manifest_path.empty() ? default_manifest_path(cfg) : manifest_path;
    SplitManifest manifest = SplitManifest::load(mpath);
    auto model = load_checkpoint(checkpoint);
    const std::string mhash = manifest_file_hash(manifest);
    if (!force && !model->cfg.manifest_hash.empty() && model->cfg.manifest_hash != mhash)
        throw ConfigError("checkpoint was trained on a different manifest (" +
                          model->cfg.manifest_hash + " != " + mhash +
                          "); pass --force to evaluate anyway");
    DatasetSplit split = load_split(manifest, cfg.data_dir());
    auto [known, unknown] = evaluate(*model, split, cfg.eval_k(), cfg.eval_metric());

    json report;
    report["known"] = {{"knn_accuracy", known.knn_accuracy}, {"map_at_5", known.map_at_5}};
    report["unknown"] = {{"knn_accuracy", unknown.knn_accuracy},
                         {"map_at_5", unknown.map_at_5}};
    report["meta"] = {{"model_kind", known.model_kind},
                      {"config_hash", model->cfg.config_hash},
                      {"manifest_hash", model->cfg.manifest_hash},
                      {"seed", model->cfg.seed},
                      {"n_known", known.n},
                      {"n_unknown", unknown.n},
                      {"embed_dim", known.d},
                      {"metric", metric_name(cfg.eval_metric())},
                      {"k", cfg.eval_k()}};
    const std::string path = report_out.empty()
                                 ? (fs::path(cfg.out_dir()) / "report.json").string()
                                 : report_out;
    fs::create_directories(fs::path(path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report: " + path);
    out << report.dump(2) << "\n";
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_visualize(const CommonArgs& common, const std::string& embeddings,
                  const std::string& out, int classes, std::uint64_t seed) {
    (void)load_config(common);
    EmbeddingMatrix em = EmbeddingMatrix::load(embeddings);
    auto pts = project_2d(em, classes, seed);
    write_projection_csv(pts, out);
    std::cout << "projection: " << out << " (" << pts.size() << " points, " << classes
              << " classes)\n";
    return 0;
}

int cmd_query(const CommonArgs& common, const std::string& index_path,
              const std::string& checkpoint, const std::string& image_path, int k,
              const std::string& out, const std::string& sheet_path,
              const std::string& data_dir) {
    ExperimentConfig cfg = load_config(common);
    EmbeddingMatrix index = EmbeddingMatrix::load(index_path);
    auto model = load_checkpoint(checkpoint);
    if (model->embed_dim() != index.d)
        throw ConfigError("index dim " + std::to_string(index.d) +
                          " does not match checkpoint embedding dim " +
                          std::to_string(model->embed_dim()));

    RasterSketch raw = read_gray_image(image_path);
    RasterSketch prepped =
        normalize_edge_map(raw, model->cfg.resolution, model->cfg.polarity);
    std::vector<RasterSketch> batch{prepped};
    ad::NoGradGuard ng;
    Var emb = model->embed(Var::constant(to_input_tensor(batch)));
    std::vector<float> qvec(static_cast<std::size_t>(index.d));
    for (int j = 0; j < index.d; ++j)
        qvec[static_cast<std::size_t>(j)] = static_cast<float>(emb.val().v[static_cast<std::size_t>(j)]);

    RetrievalResult res =
        query_gallery(index, qvec.data(), k, cfg.eval_metric(), image_path);
    json j;
    j["query"] = image_path;
    j["k"] = k;
    json results = json::array();
    for (std::size_t r = 0; r < res.ranked_ids.size(); ++r)
        results.push_back({{"id", res.ranked_ids[r]},
                           {"label", res.ranked_labels[r]},
                           {"distance", res.distances[r]}});
    j["results"] = std::move(results);
    const std::string text = j.dump(2);
    if (!out.empty()) {
        std::ofstream f(out);
        if (!f) throw IoError("cannot write query output: " + out);
        f << text << "\n";
    }
    std::cout << text << "\n";

    if (!sheet_path.empty()) {
        if (data_dir.empty())
            throw ConfigError("--contact-sheet needs --data-dir to re-render sketches");
        std::vector<RasterSketch> tiles{prepped};
        for (const auto& id : res.ranked_ids) {
            const auto colon = id.rfind(':');
            if (colon == std::string::npos) continue;
            const std::string file = id.substr(0, colon);
            const int line_no = std::stoi(id.substr(colon + 1));
            std::ifstream in(fs::path(data_dir) / file);
            if (!in) throw IoError("cannot open " + file + " for contact sheet");
            std::string line;
            for (int ln = 0; std::getline(in, line); ++ln)
                if (ln == line_no) break;
            SketchRecord rec = parse_record(line);
            tiles.push_back(rasterize(rec.sketch, model->cfg.resolution,
                                      model->cfg.resolution, Polarity::Gray0To255));
        }
        write_pgm(contact_sheet(tiles, static_cast<int>(tiles.size())), sheet_path);
        std::cout << "contact sheet: " << sheet_path << "\n";
    }
    return 0;
}

int cmd_render(const CommonArgs& common, const std::string& data_dir,
               const std::string& id, const std::string& out, int resolution) {
    (void)load_config(common);
    const auto colon = id.rfind(':');
    if (colon == std::string::npos)
        throw ConfigError("render: id must be <file>:<line_index>");
    const std::string file = id.substr(0, colon);
    const int line_no = std::stoi(id.substr(colon + 1));
    std::ifstream in(fs::path(data_dir) / file);
    if (!in) throw IoError("cannot open " + (fs::path(data_dir) / file).string());
    std::string line;
    bool found = false;
    for (int ln = 0; std::getline(in, line); ++ln)
        if (ln == line_no) {
            found = true;
            break;
        }
    if (!found) throw IoError("line " + std::to_string(line_no) + " not found in " + file);
    SketchRecord rec = parse_record(line);
    write_pgm(rasterize(rec.sketch, resolution, resolution, Polarity::Gray0To255), out);
    std::cout << "rendered " << id << " -> " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sketch representation learning toolkit"};
    app.require_subcommand(1);

    CommonArgs synth_args, prep_args, train_args, embed_args, eval_args, vis_args,
        query_args, render_args;

    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic shape dataset");
    std::string synth_out = "data/synthetic";
    int synth_classes = 20, synth_per_class = 260;
    std::uint64_t synth_seed = 3;
    add_common(synth_cmd, synth_args, false);
    synth_cmd->add_option("--out", synth_out, "output directory");
    synth_cmd->add_option("--classes", synth_classes, "number of shape classes (<=20)");
    synth_cmd->add_option("--per-class", synth_per_class, "records per class");
    synth_cmd->add_option("--seed", synth_seed, "generator seed");

    auto* prep_cmd = app.add_subcommand("prepare", "build a dataset split manifest");
    std::string prep_manifest_out;
    add_common(prep_cmd, prep_args, true);
    prep_cmd->add_option("--manifest-out", prep_manifest_out,
                         "manifest path (default <out_dir>/manifest.json)");

    auto* train_cmd = app.add_subcommand("train", "train a model on a prepared split");
    std::string train_manifest;
    add_common(train_cmd, train_args, true);
    train_cmd->add_option("--manifest", train_manifest, "manifest path");

    auto* embed_cmd = app.add_subcommand("embed", "extract embeddings for a split part");
    std::string embed_ckpt, embed_split = "test_known", embed_out, embed_manifest;
    add_common(embed_cmd, embed_args, true);
    embed_cmd->add_option("--checkpoint", embed_ckpt, "checkpoint file")->required();
    embed_cmd->add_option("--split", embed_split, "train|test_known|test_unknown");
    embed_cmd->add_option("--out", embed_out, "output embedding file")->required();
    embed_cmd->add_option("--manifest", embed_manifest, "manifest path");

    auto* eval_cmd = app.add_subcommand("evaluate", "kNN accuracy and mAP@5 on both test sets");
    std::string eval_ckpt, eval_manifest, eval_out;
    bool eval_force = false;
    add_common(eval_cmd, eval_args, true);
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file");
    eval_cmd->add_option("--manifest", eval_manifest, "manifest path");
    eval_cmd->add_option("--out", eval_out, "report path (default <out_dir>/report.json)");
    eval_cmd->add_flag("--force", eval_force, "skip checkpoint/manifest hash check");

    auto* vis_cmd = app.add_subcommand("visualize", "2-D projection of an embedding file");
    std::string vis_emb, vis_out = "projection.csv";
    int vis_classes = 8;
    std::uint64_t vis_seed = 0;
    add_common(vis_cmd, vis_args, false);
    vis_cmd->add_option("--embeddings", vis_emb, "embedding file")->required();
    vis_cmd->add_option("--out", vis_out, "output CSV");
    vis_cmd->add_option("--classes", vis_classes, "number of classes to project");
    vis_cmd->add_option("--seed", vis_seed, "class selection / t-SNE seed");

    auto* query_cmd = app.add_subcommand("query", "retrieve sketches for an edge-map image");
    std::string q_index, q_ckpt, q_image, q_out, q_sheet, q_data_dir;
    int q_k = 5;
    add_common(query_cmd, query_args, false);
    query_cmd->add_option("--index", q_index, "gallery embedding file")->required();
    query_cmd->add_option("--checkpoint", q_ckpt, "checkpoint file")->required();
    query_cmd->add_option("--image", q_image, "grayscale PNG/PGM query image")->required();
    query_cmd->add_option("--k", q_k, "results to return");
    query_cmd->add_option("--out", q_out, "write result JSON here");
    query_cmd->add_option("--contact-sheet", q_sheet, "write a PGM contact sheet");
    query_cmd->add_option("--data-dir", q_data_dir, "dataset dir for the contact sheet");

    auto* render_cmd = app.add_subcommand("render", "rasterize one record to a PGM");
    std::string r_data_dir, r_id, r_out = "sketch.pgm";
    int r_res = 256;
    add_common(render_cmd, render_args, false);
    render_cmd->add_option("--data-dir", r_data_dir, "dataset dir")->required();
    render_cmd->add_option("--id", r_id, "record id <file>:<line>")->required();
    render_cmd->add_option("--out", r_out, "output PGM");
    render_cmd->add_option("--resolution", r_res, "output resolution");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (synth_cmd->parsed())
            return cmd_synth(synth_args, synth_out, synth_classes, synth_per_class, synth_seed);
        if (prep_cmd->parsed()) return cmd_prepare(prep_args, prep_manifest_out);
        if (train_cmd->parsed()) return cmd_train(train_args, train_manifest);
        if (embed_cmd->parsed())
            return cmd_embed(embed_args, embed_ckpt, embed_split, embed_out, embed_manifest);
        if (eval_cmd->parsed())
            return cmd_evaluate(eval_args, eval_ckpt, eval_manifest, eval_out, eval_force);
        if (vis_cmd->parsed())
            return cmd_visualize(vis_args, vis_emb, vis_out, vis_classes, vis_seed);
        if (query_cmd->parsed())
            return cmd_query(query_args, q_index, q_ckpt, q_image, q_k, q_out, q_sheet,
                             q_data_dir);
        if (render_cmd->parsed())
            return cmd_render(render_args, r_data_dir, r_id, r_out, r_res);
        std::cerr << "no subcommand\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const StructuralError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const TrainingError& e) {
        std::cerr << "training aborted: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
}
