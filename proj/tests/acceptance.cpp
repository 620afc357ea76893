// Acceptance suite: one fixed-tolerance check per release criterion, one
// PASS/FAIL line each. C10 is report-only; every other criterion gates the
// exit status.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "helpers.hpp"
#include "oracles.hpp"
#include "sketchssl/augment.hpp"
#include "sketchssl/config.hpp"
#include "sketchssl/eval.hpp"
#include "sketchssl/losses.hpp"
#include "sketchssl/models.hpp"
#include "sketchssl/synth.hpp"
#include "sketchssl/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sketchssl;
using Clock = std::chrono::steady_clock;

namespace {

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& msg) {
    if (!cond) throw Failure(msg);
}

std::string fmt(double x) {
    std::ostringstream ss;
    ss.precision(4);
    ss << x;
    return ss.str();
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string source_dir() {
    const char* p = std::getenv("SKETCHSSL_SOURCE_DIR");
    return p ? p : ".";
}

std::string cli_path() {
    const char* p = std::getenv("SKETCHSSL_CLI");
    require(p != nullptr, "SKETCHSSL_CLI not set");
    return p;
}

std::string work_root() {
    static const std::string root = [] {
        auto p = fs::temp_directory_path() / "sketchssl_acceptance";
        fs::remove_all(p);
        fs::create_directories(p);
        return p.string();
    }();
    return root;
}

double scalar(const ad::Var& v) { return v.val().v[0]; }

json slurp_json(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open " + path);
    return json::parse(in);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// C9 trains BYOL once; C10 reuses the data and split.
struct ToyState {
    std::string data_dir;
    SplitManifest manifest;
    double byol_unknown_acc = -1.0;
    bool ready = false;
} g_toy;

// ----------------------------------------------------------- criterion 1

void c1_full_scale_configs(std::string& detail) {
    const fs::path cfg_dir = fs::path(source_dir()) / "configs" / "full";
    struct Expect {
        const char* file;
        const char* kind;
        const char* backbone;
        double fraction;
        int resolution;
    };
    const Expect expectations[] = {
        {"vae.json", "vae", "resnet50", 0.0, 256},
        {"byol.json", "byol", "resnet50", 0.0, 224},
        {"m2_10.json", "m2", "alexnet", 0.1, 256},
        {"m2_50.json", "m2", "alexnet", 0.5, 256},
        {"ssvae_10.json", "ssvae", "alexnet", 0.1, 256},
        {"ssvae_50.json", "ssvae", "alexnet", 0.5, 256},
        {"supervised.json", "supervised", "resnet50", 1.0, 224},
    };
    for (const auto& e : expectations) {
        const std::string path = (cfg_dir / e.file).string();
        json j = slurp_json(path);
        require(j["data"]["n_categories"] == 128, std::string(e.file) + ": n_categories != 128");
        require(j["data"]["samples_per_class"] == 1000, std::string(e.file) + ": samples != 1000");
        require(j["data"]["test_per_class"] == 100, std::string(e.file) + ": test != 100");
        require(j["data"]["label_fraction"] == e.fraction, std::string(e.file) + ": wrong label fraction");
        require(j["model"]["kind"] == e.kind, std::string(e.file) + ": wrong model kind");
        require(j["model"]["backbone"] == e.backbone, std::string(e.file) + ": wrong backbone");
        require(j["model"]["resolution"] == e.resolution, std::string(e.file) + ": wrong resolution");
        if (j["model"].contains("latent_dim"))
            require(j["model"]["latent_dim"] == 32, std::string(e.file) + ": latent != 32");
        if (j.contains("loss") && j["loss"].contains("beta"))
            require(j["loss"]["beta"] == 0.1, std::string(e.file) + ": beta != 0.1");
        if (std::string(e.kind) == "byol") {
            require(j["model"]["tau"] == 0.996, "byol tau != 0.996");
            require(j["augment"]["skip_fraction"] == 0.1, "byol skip fraction");
            require(j["augment"]["crop_scale_min"] == 0.3, "byol crop scale");
        }
        // must also parse into a valid TrainConfig
        (void)ExperimentConfig::load(path, {}).train_config();
    }
    require(slurp((fs::path(source_dir()) / "README.md").string())
                    .find("not reproducible at desk scale") != std::string::npos,
            "README does not state the desk-scale caveat");
    detail = "7 full-scale configs verified";
}

// ----------------------------------------------------------- criterion 2

void c2_loss_analytics(std::string& detail) {
    const auto t0 = Clock::now();
    using namespace sketchssl::losses;
    using ad::Var;
    auto constant = [](TensorData t) { return Var::constant(std::move(t)); };

    require(std::abs(scalar(bce_reconstruction(constant(TensorData({1, 1}, {0.5})),
                                               TensorData({1, 1}, {1.0}))) -
                     std::log(2.0)) < 1e-6, "bce ln2");
    require(std::abs(scalar(bce_reconstruction(constant(TensorData({1, 2}, {0.5, 0.5})),
                                               TensorData({1, 2}, {1.0, 0.0}))) -
                     2.0 * std::log(2.0)) < 1e-6, "bce sum semantics");
    {
        TensorData eq({1, 8}), tgt({1, 8});
        for (int i = 0; i < 8; ++i) eq.v[i] = tgt.v[i] = i % 2 ? 1.0 : 0.0;
        require(scalar(bce_reconstruction(constant(eq), tgt)) / 8.0 <= 1e-5, "bce perfect");
    }
    require(std::abs(scalar(kld(constant(TensorData({1, 1}, {0.0})),
                                constant(TensorData({1, 1}, {0.0}))))) < 1e-6, "kld 0");
    require(std::abs(scalar(kld(constant(TensorData({1, 1}, {1.0})),
                                constant(TensorData({1, 1}, {0.0})))) - 0.5) < 1e-6, "kld 0.5");
    require(std::abs(scalar(kld(constant(TensorData({1, 2}, {1.0, 1.0})),
                                constant(TensorData({1, 2}, {0.0, 0.0})))) - 1.0) < 1e-6,
            "kld additivity");
    {
        LossWeights w;
        TensorData pred({1, 2}, {0.4, 0.6}), target({1, 2}, {0.0, 1.0});
        TensorData mu({1, 1}, {1.0}), lv({1, 1}, {0.0});
        const double bce = scalar(bce_reconstruction(constant(pred), target));
        const double kl = scalar(kld(constant(mu), constant(lv)));
        require(std::abs(scalar(vae_loss(constant(pred), target, constant(mu),
                                         constant(lv), w)) -
                         (bce + 0.1 * kl)) < 1e-6, "vae_loss composition");
        require(std::abs((2.0 + 0.1 * 3.0) - 2.3) < 1e-9, "vae arithmetic 2.3");
    }
    {
        TensorData onehot({1, 3}, {0, 1, 0});
        std::vector<int> y{1};
        require(scalar(cross_entropy(constant(onehot), y)) <= 1e-5, "ce one-hot");
        TensorData uni({1, 128});
        for (auto& p : uni.v) p = 1.0 / 128.0;
        std::vector<int> y2{5};
        require(std::abs(scalar(cross_entropy(constant(uni), y2)) - std::log(128.0)) < 1e-5,
                "ce ln128 (4.8520)");
        TensorData quarter({1, 4}, {0.25, 0.25, 0.25, 0.25});
        std::vector<int> y3{2};
        require(std::abs(scalar(cross_entropy(constant(quarter), y3)) - std::log(4.0)) < 1e-6,
                "ce ln4 (1.3863)");
    }
    {
        TensorData onehot({1, 4}, {0, 0, 1, 0});
        require(std::abs(scalar(entropy(constant(onehot)))) < 1e-6, "entropy one-hot 0");
        TensorData uni({1, 6});
        for (auto& p : uni.v) p = 1.0 / 6.0;
        require(std::abs(scalar(entropy(constant(uni))) - std::log(6.0)) < 1e-6, "entropy lnC");
        TensorData half({1, 2}, {0.5, 0.5});
        require(std::abs(scalar(entropy(constant(half))) - std::log(2.0)) < 1e-6,
                "entropy ln2 (0.6931)");
    }
    {
        LossWeights w;
        w.n_train = 1000;
        TensorData probs({1, 2}, {std::exp(-2.0), 1.0 - std::exp(-2.0)});
        std::vector<int> y{0};
        require(std::abs(scalar(m2_labeled_loss(constant(TensorData::scalar(1.0)), y,
                                                constant(probs), w)) - 201.0) < 1e-5,
                "m2 labeled 201");
        w.n_train = 2000;
        require(std::abs(scalar(m2_labeled_loss(constant(TensorData::scalar(1.0)), y,
                                                constant(probs), w)) - 401.0) < 1e-5,
                "m2 labeled N-linearity");
        TensorData sure({1, 2}, {1.0, 0.0});
        w.n_train = 1000;
        require(std::abs(scalar(m2_labeled_loss(constant(TensorData::scalar(1.0)), y,
                                                constant(sure), w)) - 1.0) <=
                    1.28e-4 * 1000,
                "m2 labeled perfect classifier");
    }
    {
        LossWeights w;
        TensorData gen({1, 3}, {2.0, 5.0, 9.0});
        TensorData onehot({1, 3}, {0.0, 1.0, 0.0});
        require(std::abs(scalar(m2_unlabeled_loss(constant(gen), constant(onehot), w)) - 5.0) <
                1e-6, "m2 unlabeled one-hot");
        TensorData gen2({1, 2}, {2.0, 4.0});
        TensorData half({1, 2}, {0.5, 0.5});
        require(std::abs(scalar(m2_unlabeled_loss(constant(gen2), constant(half), w)) -
                         (3.0 + std::log(2.0))) < 1e-6, "m2 unlabeled 3.6931");
    }
    {
        LossWeights w;
        TensorData pred({1, 2}, {0.3, 0.9}), target({1, 2}, {0.0, 1.0});
        TensorData mu({1, 1}, {0.7}), lv({1, 1}, {0.1});
        TensorData probs({1, 2}, {0.4, 0.6});
        const double base =
            scalar(vae_loss(constant(pred), target, constant(mu), constant(lv), w));
        require(std::abs(scalar(ssvae_loss(constant(pred), target, constant(mu),
                                           constant(lv), {}, constant(probs), w)) -
                         base) < 1e-9, "ssvae unlabeled = vae");
        LossWeights w0 = w;
        w0.alpha = 0.0;
        std::vector<int> y{0};
        require(std::abs(scalar(ssvae_loss(constant(pred), target, constant(mu),
                                           constant(lv), y, constant(probs), w0)) -
                         base) < 1e-9, "ssvae alpha=0");
        require(std::abs((1.0 + 0.1 * 2.0 + 0.1 * 3.0) - 1.5) < 1e-9, "ssvae arithmetic 1.5");
    }
    {
        TensorData pa({1, 3}, {1, 2, 3}), tb({1, 3}, {2, 4, 6});
        require(std::abs(scalar(byol_loss(constant(pa), constant(tb), constant(pa),
                                          constant(tb)))) < 1e-6, "byol proportional 0");
        TensorData ex({1, 2}, {1, 0}), ey({1, 2}, {0, 1});
        require(std::abs(scalar(byol_loss(constant(ex), constant(ey), constant(ey),
                                          constant(ex))) - 4.0) < 1e-6, "byol orthogonal 4");
        TensorData t60({1, 2}, {std::cos(M_PI / 3), std::sin(M_PI / 3)});
        TensorData same({1, 2}, {5, 5});
        require(std::abs(scalar(byol_loss(constant(ex), constant(t60), constant(same),
                                          constant(same))) - 1.0) < 1e-6, "byol 60deg 1");
    }
    const double elapsed = seconds_since(t0);
    require(elapsed < 5.0, "budget exceeded: " + fmt(elapsed) + "s");
    detail = "all loss examples within tolerance in " + fmt(elapsed) + "s";
}

// ----------------------------------------------------------- criterion 3

void c3_metric_oracles(std::string& detail) {
    const auto t0 = Clock::now();
    Rng rng(303);
    for (int trial = 0; trial < 50; ++trial) {
        const int per_class = 10 + static_cast<int>(rng.uniform_int(21));  // N <= 300
        const int n = 10 * per_class, d = 16;
        EmbeddingMatrix em;
        em.n = n;
        em.d = d;
        em.vectors.resize(static_cast<std::size_t>(n) * d);
        em.labels.resize(static_cast<std::size_t>(n));
        em.ids.resize(static_cast<std::size_t>(n));
        const bool clustered = rng.uniform() < 0.5;
        std::vector<double> centers(static_cast<std::size_t>(10 * d));
        for (auto& c : centers) c = rng.normal() * 8.0;
        for (int i = 0; i < n; ++i) {
            const int cls = i / per_class;
            em.labels[static_cast<std::size_t>(i)] = cls;
            em.ids[static_cast<std::size_t>(i)] = std::to_string(i);
            for (int j = 0; j < d; ++j)
                em.vectors[static_cast<std::size_t>(i) * d + j] = static_cast<float>(
                    (clustered ? centers[static_cast<std::size_t>(cls * d + j)] : 0.0) +
                    rng.normal() * 2.0);
        }
        const double acc = knn_accuracy(em, 5);
        const double acc_o = test_oracles::oracle_knn_accuracy(em, 5, DistanceMetric::Euclidean);
        require(acc == acc_o, "knn mismatch trial " + std::to_string(trial));
        const double m = map_at_k(em, 5);
        const double m_o = test_oracles::oracle_map_at_k(em, 5, DistanceMetric::Euclidean);
        require(std::abs(m - m_o) < 1e-12, "map mismatch trial " + std::to_string(trial));
    }
    const double elapsed = seconds_since(t0);
    require(elapsed < 60.0, "budget exceeded: " + fmt(elapsed) + "s");
    detail = "50 instances exact in " + fmt(elapsed) + "s";
}

// ----------------------------------------------------------- criterion 4

void c4_permutation_null(std::string& detail) {
    Rng rng(404);
    const int classes = 128, per_class = 100, d = 8;
    const int n = classes * per_class;
    EmbeddingMatrix em;
    em.n = n;
    em.d = d;
    em.vectors.resize(static_cast<std::size_t>(n) * d);
    for (auto& x : em.vectors) x = static_cast<float>(rng.normal());
    em.labels.resize(static_cast<std::size_t>(n));
    em.ids.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        em.labels[static_cast<std::size_t>(i)] = i / per_class;
        em.ids[static_cast<std::size_t>(i)] = std::to_string(i);
    }
    double acc_sum = 0.0, map_sum = 0.0;
    for (int shuffle = 0; shuffle < 10; ++shuffle) {
        rng.shuffle(em.labels);
        acc_sum += knn_accuracy(em, 5);
        map_sum += map_at_k(em, 5);
    }
    const double acc_mean = acc_sum / 10.0;
    const double map_mean = map_sum / 10.0;
    detail = "knn " + fmt(acc_mean) + " vs 1/128=" + fmt(1.0 / 128.0) + ", mAP " +
             fmt(map_mean) + " vs 99/12799=" + fmt(99.0 / 12799.0);
    require(std::abs(acc_mean - 1.0 / 128.0) <= 0.01, "knn null deviates: " + detail);
    require(std::abs(map_mean - 99.0 / 12799.0) <= 0.01, "map null deviates: " + detail);
}

// ----------------------------------------------------------- criterion 5

void c5_augmentation_suite(std::string& detail) {
    Rng rng(505);
    for (int t = 0; t < 1000; ++t) {
        StrokeSketch s = test_helpers::random_sketch(rng, 1, 14);
        StrokeSketch ff = hflip(hflip(s));
        require(ff.stroke_count() == s.stroke_count(), "hflip stroke count");
        for (std::size_t i = 0; i < s.strokes.size(); ++i)
            require(ff.strokes[i].x == s.strokes[i].x && ff.strokes[i].y == s.strokes[i].y,
                    "hflip not an exact involution");
    }
    for (int t = 0; t < 1000; ++t) {
        StrokeSketch s = test_helpers::random_sketch(rng, 1, 14);
        StrokeSketch r = rotate(s, rng.uniform(-30.0, 30.0));
        require(r.stroke_count() == s.stroke_count(), "rotate stroke count");
        std::vector<std::pair<double, double>> pa, pb;
        for (const auto& st : s.strokes)
            for (std::size_t i = 0; i < st.size(); ++i) pa.emplace_back(st.x[i], st.y[i]);
        for (const auto& st : r.strokes)
            for (std::size_t i = 0; i < st.size(); ++i) pb.emplace_back(st.x[i], st.y[i]);
        require(pa.size() == pb.size(), "rotate point count");
        const std::size_t stride = std::max<std::size_t>(1, pa.size() / 8);
        for (std::size_t i = 0; i < pa.size(); i += stride)
            for (std::size_t j = i + 1; j < pa.size(); j += stride) {
                const double da = std::hypot(pa[i].first - pa[j].first, pa[i].second - pa[j].second);
                const double db = std::hypot(pb[i].first - pb[j].first, pb[i].second - pb[j].second);
                require(std::abs(da - db) < 1e-6, "rotate distance drift");
            }
    }
    for (int t = 0; t < 1000; ++t) {
        StrokeSketch s = test_helpers::random_sketch(rng, 2, 14);
        const int before = static_cast<int>(s.stroke_count());
        StrokeSketch out = line_skip(s, 0.1, rng);
        require(out.stroke_count() >= 1, "line_skip emptied a sketch");
        require(static_cast<int>(out.stroke_count()) ==
                    before - std::max(1, static_cast<int>(std::floor(0.1 * before))),
                "line_skip removal count");
    }
    StrokeSketch probe = test_helpers::random_sketch(rng, 1, 10);
    RasterSketch img = rasterize(probe, 256, 256, Polarity::Gray0To255);
    for (int t = 0; t < 1000; ++t) {
        const double scale = rng.uniform(0.3, 1.0);
        const int side = static_cast<int>(std::floor(scale * 256));
        const int top = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(256 - side + 1)));
        const int left = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(256 - side + 1)));
        require(top + side <= 256 && left + side <= 256, "crop rectangle out of bounds");
        RasterSketch out = sized_crop(img, scale, top, left, 48, 48);
        require(out.h == 48 && out.w == 48, "crop output shape");
    }
    detail = "4 x 1000 randomized trials";
}

// ----------------------------------------------------------- criterion 6

void c6_m2_marginalization(std::string& detail) {
    Rng rng(606);
    losses::LossWeights w;
    for (int c : {2, 3, 8}) {
        for (int t = 0; t < 25; ++t) {
            const int n = 1 + static_cast<int>(rng.uniform_int(4));
            TensorData gen({n, c});
            for (auto& g : gen.v) g = rng.uniform(0.0, 12.0);
            TensorData probs({n, c});
            for (int i = 0; i < n; ++i) {
                double sum = 0.0;
                for (int j = 0; j < c; ++j) {
                    const double e = std::exp(rng.normal());
                    probs.v[static_cast<std::size_t>(i) * c + j] = e;
                    sum += e;
                }
                for (int j = 0; j < c; ++j) probs.v[static_cast<std::size_t>(i) * c + j] /= sum;
            }
            const double got = scalar(losses::m2_unlabeled_loss(ad::Var::constant(gen),
                                                                ad::Var::constant(probs), w));
            const double want = test_oracles::oracle_m2_unlabeled(gen, probs, 1.0);
            require(std::abs(got - want) < 1e-6, "mismatch at C=" + std::to_string(c));
        }
    }
    detail = "C in {2,3,8}, 25 random inputs each, 1e-6";
}

// ----------------------------------------------------------- criterion 7

void c7_byol_mechanics(std::string& detail) {
    ModelConfig mc;
    mc.kind = ModelKind::Byol;
    mc.backbone = BackboneKind::SmallCnn;
    mc.small_cnn_width = 8;
    mc.byol_proj_hidden = 16;
    mc.byol_proj_dim = 8;
    mc.resolution = 16;
    mc.polarity = Polarity::Gray0To255;
    mc.init_seed = 7;
    ByolModel byol(mc);
    Rng rng(707);
    TensorData va({2, 1, 16, 16}), vb({2, 1, 16, 16});
    for (auto& x : va.v) x = rng.uniform();
    for (auto& x : vb.v) x = rng.uniform();
    auto vecs = byol.forward(ad::Var::constant(va), ad::Var::constant(vb), true);
    ad::backward(losses::byol_loss(vecs.pred_a, vecs.targ_b, vecs.pred_b, vecs.targ_a));
    double online_norm = 0.0;
    for (const auto& [name, p] : byol.store.params()) {
        double g = 0.0;
        for (double x : p.n->grad) g += x * x;
        if (name.rfind("target.", 0) == 0)
            require(g == 0.0, "target gradient nonzero for " + name);
        else
            online_norm += g;
    }
    require(online_norm > 0.0, "online gradients vanished");

    for (double tau : {0.0, 0.9, 1.0}) {
        ModelConfig mt = mc;
        mt.tau = tau;
        ByolModel model(mt);
        for (const auto& [online, target] : model.ema_pairs())
            for (auto& x : online.n->val.v) x += 0.5;
        std::vector<std::vector<double>> before;
        for (const auto& [online, target] : model.ema_pairs()) before.push_back(target.val().v);
        model.ema_update();
        std::size_t pi = 0;
        for (const auto& [online, target] : model.ema_pairs()) {
            for (std::size_t i = 0; i < target.val().v.size(); ++i)
                require(std::abs(target.val().v[i] -
                                 (tau * before[pi][i] + (1.0 - tau) * online.val().v[i])) < 1e-7,
                        "ema drift at tau " + fmt(tau));
            ++pi;
        }
    }

    for (int t = 0; t < 10000; ++t) {
        const int d = 2 + static_cast<int>(rng.uniform_int(6));
        auto rt = [&] {
            TensorData td({1, d});
            for (auto& x : td.v) x = rng.normal();
            return ad::Var::constant(td);
        };
        const double v = scalar(losses::byol_loss(rt(), rt(), rt(), rt()));
        require(v >= 0.0 && v <= 8.0, "byol loss out of [0,8]: " + fmt(v));
    }
    detail = "stop-gradient, EMA at tau {0,0.9,1}, 10k range draws";
}

// ----------------------------------------------------------- criterion 8

void c8_gradient_checks(std::string& detail) {
    Rng rng(808);
    const double tol = 1e-3;
    const int coords = 110;
    double worst = 0.0;
    losses::LossWeights w;

    auto binary_images = [&](int n, int res) {
        TensorData t({n, 1, res, res});
        for (auto& x : t.v) x = rng.uniform() < 0.8 ? 1.0 : 0.0;
        return t;
    };
    auto run_check = [&](nn::ParamStore& store, const std::function<ad::Var()>& fn,
                         const char* label) {
        auto res = test_helpers::check_param_gradients(store, fn, coords, rng);
        require(res.checked >= 100, std::string(label) + ": too few coordinates");
        require(res.max_rel < tol, std::string(label) + ": rel err " + fmt(res.max_rel) +
                                       " at " + res.worst_param + " (analytic " +
                                       fmt(res.worst_analytic) + ", fd " +
                                       fmt(res.worst_fd) + ")");
        worst = std::max(worst, res.max_rel);
    };

    {  // vae_loss through the full VAE at small_cnn width
        ModelConfig mc;
        mc.kind = ModelKind::Vae;
        mc.backbone = BackboneKind::SmallCnn;
        mc.small_cnn_width = 8;
        mc.latent_dim = 4;
        mc.resolution = 16;
        mc.init_seed = 81;
        VaeModel vae(mc);
        TensorData images = binary_images(2, 16);
        TensorData eps = draw_standard_normal({2, 4}, rng);
        run_check(vae.store, [&] {
            auto lp = vae.encode(ad::Var::constant(images), true);
            ad::Var recon = vae.decode(reparameterize(lp, eps), true);
            return losses::vae_loss(recon, images, lp.mu, lp.logvar, w);
        }, "vae_loss");
    }
    {  // ssvae_loss, labeled path
        ModelConfig mc;
        mc.kind = ModelKind::Ssvae;
        mc.backbone = BackboneKind::SmallCnn;
        mc.small_cnn_width = 8;
        mc.latent_dim = 4;
        mc.n_classes = 3;
        mc.resolution = 16;
        mc.init_seed = 82;
        SsvaeModel ssvae(mc);
        TensorData images = binary_images(2, 16);
        std::vector<int> labels{0, 2};
        run_check(ssvae.store, [&] {
            Rng fixed(31337);  // same eps draw on every evaluation
            auto o = ssvae.forward(ad::Var::constant(images), true, &fixed);
            return losses::ssvae_loss(o.recon, images, o.lp.mu, o.lp.logvar, labels,
                                      o.probs, w);
        }, "ssvae_loss");
    }
    {  // m2 labeled + unlabeled
        ModelConfig mc;
        mc.kind = ModelKind::M2;
        mc.backbone = BackboneKind::SmallCnn;
        mc.small_cnn_width = 8;
        mc.latent_dim = 4;
        mc.n_classes = 3;
        mc.resolution = 16;
        mc.init_seed = 83;
        M2Model m2(mc);
        TensorData images = binary_images(2, 16);
        TensorData eps = draw_standard_normal({2, 4}, rng);
        std::vector<int> labels{1, 2};
        losses::LossWeights wm = w;
        wm.n_train = 7;
        run_check(m2.store, [&] {
            ad::Var x = ad::Var::constant(images);
            auto lp = m2.encode(x, true);
            ad::Var probs = m2.classify(x, true);
            ad::Var recon = m2.decode(reparameterize(lp, eps),
                                      ad::Var::constant(one_hot(labels, 3)), true);
            ad::Var gen = losses::vae_loss(recon, images, lp.mu, lp.logvar, wm);
            return losses::m2_labeled_loss(gen, labels, probs, wm);
        }, "m2_labeled_loss");
        run_check(m2.store, [&] {
            ad::Var x = ad::Var::constant(images);
            auto lp = m2.encode(x, true);
            ad::Var probs = m2.classify(x, true);
            ad::Var z = reparameterize(lp, eps);
            ad::Var kld_part = ad::kld_rows(lp.mu, lp.logvar);
            ad::Var gen_matrix;
            for (int c = 0; c < 3; ++c) {
                std::vector<int> ycol(2, c);
                ad::Var recon = m2.decode(z, ad::Var::constant(one_hot(ycol, 3)), true);
                ad::Var col = ad::reshape(
                    ad::add(ad::bce_rows(recon, images), ad::scale(kld_part, wm.beta)),
                    {2, 1});
                gen_matrix = c == 0 ? col : ad::concat_cols(gen_matrix, col);
            }
            return losses::m2_unlabeled_loss(gen_matrix, probs, wm);
        }, "m2_unlabeled_loss");
    }
    {  // byol_loss through online encoder/projector/predictor
        ModelConfig mc;
        mc.kind = ModelKind::Byol;
        mc.backbone = BackboneKind::SmallCnn;
        mc.small_cnn_width = 8;
        mc.byol_proj_hidden = 16;
        mc.byol_proj_dim = 8;
        mc.resolution = 16;
        mc.polarity = Polarity::Gray0To255;
        mc.init_seed = 84;
        ByolModel byol(mc);
        Rng vr(809);
        TensorData va({2, 1, 16, 16}), vb({2, 1, 16, 16});
        for (auto& x : va.v) x = vr.uniform();
        for (auto& x : vb.v) x = vr.uniform();
        run_check(byol.store, [&] {
            auto vecs = byol.forward(ad::Var::constant(va), ad::Var::constant(vb), true);
            return losses::byol_loss(vecs.pred_a, vecs.targ_b, vecs.pred_b, vecs.targ_a);
        }, "byol_loss");
    }
    detail = "5 losses x " + std::to_string(coords) + " coords, max rel err " + fmt(worst);
}

// ----------------------------------------------------------- criterion 9

void c9_toy_learning_signal(std::string& detail) {
    const auto t0 = Clock::now();
    g_toy.data_dir = work_root() + "/toy_data";
    synth::write_dataset(g_toy.data_dir, 20, 252, 3);

    SplitSpec spec;
    spec.n_categories = 10;
    spec.samples_per_class = 200;
    spec.test_per_class = 50;
    spec.label_fraction = 0.0;
    spec.seed = 11;
    g_toy.manifest = build_manifest(scan_data_dir(g_toy.data_dir), spec);
    DatasetSplit split = load_split(g_toy.manifest, g_toy.data_dir);

    TrainConfig cfg;
    cfg.model_kind = ModelKind::Byol;
    cfg.backbone = BackboneKind::SmallCnn;
    cfg.small_cnn_width = 32;
    cfg.byol_proj_hidden = 256;
    cfg.byol_proj_dim = 64;
    cfg.resolution = 64;
    cfg.epochs = 30;
    cfg.batch_size = 64;
    cfg.optimizer.lr = 1e-3;
    cfg.tau = 0.99;
    cfg.seed = 1;

    RunMeta meta;
    meta.out_dir = work_root() + "/byol_run";
    meta.keep_step_records = false;
    TrainResult tr = train(split, cfg, meta);
    auto trained = load_checkpoint(tr.final_checkpoint);

    EmbeddingMatrix trained_em = extract_embeddings(*trained, split.test_known);
    const double trained_acc = knn_accuracy(trained_em, 5);

    // random-init baseline: same architecture and init seed, no training
    auto random_init = make_model(model_config_from_train(cfg, 10));
    EmbeddingMatrix random_em = extract_embeddings(*random_init, split.test_known);
    const double random_acc = knn_accuracy(random_em, 5);

    EmbeddingMatrix unknown_em = extract_embeddings(*trained, split.test_unknown);
    g_toy.byol_unknown_acc = knn_accuracy(unknown_em, 5);
    g_toy.ready = true;

    const double elapsed = seconds_since(t0);
    detail = "trained " + fmt(trained_acc) + ", random-init " + fmt(random_acc) +
             ", unknown " + fmt(g_toy.byol_unknown_acc) + ", " + fmt(elapsed) + "s";
    require(elapsed < 1800.0, "budget exceeded: " + fmt(elapsed) + "s");
    require(trained_acc >= 0.30, "trained kNN below 0.30 floor: " + detail);
    require(trained_acc - random_acc >= 0.10, "improvement under 0.10: " + detail);
}

// ----------------------------------------------------------- criterion 10

void c10_generalization_direction(std::string& detail) {
    require(g_toy.ready, "toy BYOL state missing (criterion 9 must run first)");
    // same data and selection seed, fully labeled for the supervised baseline
    SplitSpec spec;
    spec.n_categories = 10;
    spec.samples_per_class = 200;
    spec.test_per_class = 50;
    spec.label_fraction = 1.0;
    spec.seed = 11;
    DatasetSplit split = load_split(build_manifest(scan_data_dir(g_toy.data_dir), spec),
                                    g_toy.data_dir);

    TrainConfig cfg;
    cfg.model_kind = ModelKind::Supervised;
    cfg.backbone = BackboneKind::SmallCnn;
    cfg.small_cnn_width = 32;
    cfg.resolution = 64;
    cfg.epochs = 8;
    cfg.batch_size = 64;
    cfg.optimizer.lr = 1e-3;
    cfg.seed = 1;

    RunMeta meta;
    meta.out_dir = work_root() + "/supervised_run";
    meta.keep_step_records = false;
    TrainResult tr = train(split, cfg, meta);
    auto sup = load_checkpoint(tr.final_checkpoint);
    EmbeddingMatrix unknown_em = extract_embeddings(*sup, split.test_unknown);
    const double sup_unknown = knn_accuracy(unknown_em, 5);

    detail = "unknown-category kNN: byol " + fmt(g_toy.byol_unknown_acc) + ", supervised " +
             fmt(sup_unknown) +
             (g_toy.byol_unknown_acc > sup_unknown ? " (byol generalizes better)"
                                                   : " (supervised ahead on this toy run)");
    // report-only: both numbers are recorded, no threshold gates
}

// ----------------------------------------------------------- criterion 11

struct E2eArtifacts {
    std::string workdir;
    json report;
    std::string manifest_text;
};

E2eArtifacts run_pipeline(const std::string& tag) {
    E2eArtifacts art;
    art.workdir = work_root() + "/" + tag;
    const std::string script = source_dir() + "/scripts/toy_pipeline.sh";
    const std::string log = art.workdir + "_log.txt";
    fs::create_directories(art.workdir);
    const std::string cmd = "bash " + script + " " + cli_path() + " " + art.workdir +
                            " 1 > " + log + " 2>&1";
    const int rc = std::system(cmd.c_str());
    require(WEXITSTATUS(rc) == 0, "pipeline script failed, see " + log);
    art.report = slurp_json(art.workdir + "/run/report.json");
    art.manifest_text = slurp(art.workdir + "/run/manifest.json");
    return art;
}

E2eArtifacts g_e2e_first;

void c11_end_to_end(std::string& detail) {
    const auto t0 = Clock::now();
    g_e2e_first = run_pipeline("e2e_a");
    const std::string run = g_e2e_first.workdir + "/run";

    // manifest schema
    json manifest = json::parse(g_e2e_first.manifest_text);
    for (const char* key : {"seed", "label_fraction", "train_categories",
                            "unknown_categories", "records"})
        require(manifest.contains(key), std::string("manifest missing ") + key);
    require(manifest["train_categories"].size() == 10, "manifest category count");
    const auto& rec0 = manifest["records"][0];
    for (const char* key : {"file", "line_index", "category_id", "label_visible", "split"})
        require(rec0.contains(key), std::string("manifest record missing ") + key);

    // checkpoint loads and matches the config
    auto model = load_checkpoint(run + "/checkpoint_final.ckpt");
    require(model->cfg.kind == ModelKind::Vae, "checkpoint kind");
    require(!model->cfg.config_hash.empty() && !model->cfg.manifest_hash.empty(),
            "checkpoint must embed config and manifest hashes");

    // embeddings
    EmbeddingMatrix em = EmbeddingMatrix::load(run + "/test_known.emb");
    require(em.n == 10 * 20, "embedding rows");
    require(em.d == 16, "embedding dim");
    require(em.config_hash == model->cfg.config_hash, "embedding config hash");

    // report: exactly the two metrics per split
    for (const char* split_name : {"known", "unknown"}) {
        require(g_e2e_first.report.contains(split_name), "report missing split");
        const json& s = g_e2e_first.report[split_name];
        require(s.size() == 2 && s.contains("knn_accuracy") && s.contains("map_at_5"),
                "per-split report schema must be exactly {knn_accuracy, map_at_5}");
        const double acc = s["knn_accuracy"].get<double>();
        const double m = s["map_at_5"].get<double>();
        require(acc >= 0.0 && acc <= 1.0 && m >= 0.0 && m <= 1.0, "metric range");
    }

    // projection csv: header plus exactly 8 classes
    std::ifstream csv(run + "/projection.csv");
    require(csv.good(), "projection.csv missing");
    std::string header;
    std::getline(csv, header);
    require(header == "id,label,x,y", "projection header");
    std::set<std::string> labels;
    std::string line;
    int rows = 0;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        ++rows;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        labels.insert(line.substr(c1 + 1, c2 - c1 - 1));
    }
    require(labels.size() == 8, "projection must contain exactly 8 classes, got " +
                                    std::to_string(labels.size()));
    require(rows == 8 * 20, "projection row count");

    // self-retrieval: rank 1 is the rendered record at distance ~0
    json query = slurp_json(run + "/query.json");
    std::string qid = slurp(run + "/query_id.txt");
    while (!qid.empty() && (qid.back() == '\n' || qid.back() == '\r')) qid.pop_back();
    require(query["results"].size() >= 1, "query returned nothing");
    require(query["results"][0]["id"].get<std::string>() == qid,
            "self-retrieval rank 1 is " + query["results"][0]["id"].get<std::string>() +
                ", expected " + qid);
    require(query["results"][0]["distance"].get<double>() < 1e-9,
            "self-retrieval distance not ~0");

    const double elapsed = seconds_since(t0);
    require(elapsed < 600.0, "budget exceeded: " + fmt(elapsed) + "s");
    detail = "prepare/train/embed/evaluate/visualize/query in " + fmt(elapsed) + "s";
}

// ----------------------------------------------------------- criterion 12

void c12_determinism(std::string& detail) {
    require(!g_e2e_first.workdir.empty(), "criterion 11 must run first");
    E2eArtifacts second = run_pipeline("e2e_b");
    require(second.manifest_text == g_e2e_first.manifest_text,
            "manifests differ between identical runs");
    double max_diff = 0.0;
    for (const char* split_name : {"known", "unknown"})
        for (const char* metric : {"knn_accuracy", "map_at_5"}) {
            const double a = g_e2e_first.report[split_name][metric].get<double>();
            const double b = second.report[split_name][metric].get<double>();
            max_diff = std::max(max_diff, std::abs(a - b));
        }
    require(max_diff < 1e-4, "metrics diverge by " + fmt(max_diff));
    detail = "identical manifest, metric diff " + fmt(max_diff);
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<void(std::string&)> run;
        bool gating;
    };
    const std::vector<Criterion> criteria = {
        {1, "full-scale configs ship verbatim; desk-scale caveat stated", c1_full_scale_configs, true},
        {2, "loss analytics within 1e-5/1e-6 under 5s", c2_loss_analytics, true},
        {3, "retrieval metrics match brute-force oracles exactly", c3_metric_oracles, true},
        {4, "permutation null: knn ~ 1/128, mAP@5 ~ 99/12799", c4_permutation_null, true},
        {5, "augmentation suite, 1000 randomized trials each", c5_augmentation_suite, true},
        {6, "M2 marginalization equals explicit expectation loop", c6_m2_marginalization, true},
        {7, "BYOL mechanics: stop-gradient, EMA, loss range", c7_byol_mechanics, true},
        {8, "analytic gradients match central finite differences", c8_gradient_checks, true},
        {9, "toy BYOL: kNN >= 0.30 and >= random-init + 0.10", c9_toy_learning_signal, true},
        {10, "generalization direction recorded (report-only)", c10_generalization_direction, false},
        {11, "end-to-end toy pipeline from one script", c11_end_to_end, true},
        {12, "pipeline determinism across identical reruns", c12_determinism, true},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        std::string detail;
        try {
            c.run(detail);
            std::cout << "[PASS] C" << c.id << " " << c.name
                      << (detail.empty() ? "" : " -- " + detail) << "\n";
        } catch (const std::exception& e) {
            if (c.gating) {
                ++failures;
                std::cout << "[FAIL] C" << c.id << " " << c.name << " -- " << e.what() << "\n";
            } else {
                std::cout << "[WARN] C" << c.id << " " << c.name << " -- " << e.what() << "\n";
            }
        }
        std::cout.flush();
    }
    if (failures > 0) {
        std::cout << failures << " gating criteria failed\n";
        return 1;
    }
    std::cout << "all gating criteria passed\n";
    return 0;
}
