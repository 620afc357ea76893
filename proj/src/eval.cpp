#include "sketchssl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "sketchssl/autodiff.hpp"
#include "sketchssl/kernels.hpp"
#include "sketchssl/models.hpp"

using nlohmann::json;

namespace sketchssl {

std::string metric_name(DistanceMetric m) {
    return m == DistanceMetric::Euclidean ? "euclidean" : "cosine";
}

DistanceMetric metric_from_name(const std::string& s) {
    if (s == "euclidean") return DistanceMetric::Euclidean;
    if (s == "cosine") return DistanceMetric::Cosine;
    throw ConfigError("unknown metric: " + s);
}

void EmbeddingMatrix::validate() const {
    if (n < 0 || d <= 0) throw ConfigError("embedding matrix: bad dims");
    if (static_cast<std::size_t>(n) * d != vectors.size() ||
        labels.size() != static_cast<std::size_t>(n) ||
        ids.size() != static_cast<std::size_t>(n))
        throw ConfigError("embedding matrix: inconsistent row count");
    for (float x : vectors)
        if (!std::isfinite(x)) throw ConfigError("embedding matrix: non-finite entry");
}

// --------------------------------------------------------------- distances

namespace {

double row_distance(const float* a, const float* b, int d, DistanceMetric metric) {
    if (metric == DistanceMetric::Euclidean) {
        double acc = 0.0;
        for (int t = 0; t < d; ++t) {
            const double diff = static_cast<double>(a[t]) - static_cast<double>(b[t]);
            acc += diff * diff;
        }
        return acc;  // squared; monotone in the true distance
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int t = 0; t < d; ++t) {
        dot += static_cast<double>(a[t]) * b[t];
        na += static_cast<double>(a[t]) * a[t];
        nb += static_cast<double>(b[t]) * b[t];
    }
    const double denom = std::max(std::sqrt(na) * std::sqrt(nb), 1e-30);
    return 1.0 - dot / denom;
}

// ranked indices of the k nearest gallery rows (query row excluded),
// ties broken by index for determinism
std::vector<int> top_k_neighbors(const EmbeddingMatrix& em, int q, int k,
                                 DistanceMetric metric, std::vector<double>* dists_out) {
    std::vector<std::pair<double, int>> heap;  // max-heap of size k
    heap.reserve(static_cast<std::size_t>(k) + 1);
    auto cmp = [](const std::pair<double, int>& a, const std::pair<double, int>& b) {
        return a < b;  // max-heap on (dist, idx)
    };
    const float* qv = em.row(q);
    for (int j = 0; j < em.n; ++j) {
        if (j == q) continue;
        const double dist = row_distance(qv, em.row(j), em.d, metric);
        if (static_cast<int>(heap.size()) < k) {
            heap.emplace_back(dist, j);
            std::push_heap(heap.begin(), heap.end(), cmp);
        } else if (std::make_pair(dist, j) < heap.front()) {
            std::pop_heap(heap.begin(), heap.end(), cmp);
            heap.back() = {dist, j};
            std::push_heap(heap.begin(), heap.end(), cmp);
        }
    }
    std::sort_heap(heap.begin(), heap.end(), cmp);
    std::vector<int> out;
    out.reserve(heap.size());
    if (dists_out) dists_out->clear();
    for (const auto& [dist, j] : heap) {
        out.push_back(j);
        if (dists_out) dists_out->push_back(dist);
    }
    return out;
}

}  // namespace

// ------------------------------------------------------------------ metrics

double knn_accuracy(const EmbeddingMatrix& em, int k, DistanceMetric metric) {
    em.validate();
    if (em.n <= k) throw ConfigError("knn_accuracy: need more than k items");
    std::vector<int> correct(static_cast<std::size_t>(em.n), 0);
#pragma omp parallel for schedule(static)
    for (int q = 0; q < em.n; ++q) {
        const std::vector<int> nn = top_k_neighbors(em, q, k, metric, nullptr);
        // votes + best (lowest) rank per class among the k neighbors
        std::map<int, std::pair<int, int>> votes;  // label -> (count, best_rank)
        for (std::size_t r = 0; r < nn.size(); ++r) {
            const int lab = em.labels[static_cast<std::size_t>(nn[r])];
            auto it = votes.find(lab);
            if (it == votes.end())
                votes.emplace(lab, std::make_pair(1, static_cast<int>(r)));
            else
                it->second.first += 1;
        }
        int best_label = -1, best_count = -1, best_rank = em.n;
        for (const auto& [lab, cr] : votes) {
            if (cr.first > best_count ||
                (cr.first == best_count && cr.second < best_rank)) {
                best_label = lab;
                best_count = cr.first;
                best_rank = cr.second;
            }
        }
        correct[static_cast<std::size_t>(q)] =
            best_label == em.labels[static_cast<std::size_t>(q)] ? 1 : 0;
    }
    std::int64_t hits = 0;
    for (int c : correct) hits += c;
    return static_cast<double>(hits) / em.n;
}

double map_at_k(const EmbeddingMatrix& em, int k, DistanceMetric metric) {
    em.validate();
    if (em.n <= k) throw ConfigError("map_at_k: need more than k items");
    std::vector<int> class_count(em.labels.size(), 0);
    {
        std::map<int, int> hist;
        for (int lab : em.labels) ++hist[lab];
        for (std::size_t i = 0; i < em.labels.size(); ++i)
            class_count[i] = hist[em.labels[i]];
    }
    std::vector<double> ap(static_cast<std::size_t>(em.n), 0.0);
    int singletons = 0;
#pragma omp parallel for schedule(static) reduction(+ : singletons)
    for (int q = 0; q < em.n; ++q) {
        const int relevant_total = class_count[static_cast<std::size_t>(q)] - 1;
        if (relevant_total <= 0) {
            ++singletons;  // AP defined as 0
            continue;
        }
        const std::vector<int> nn = top_k_neighbors(em, q, k, metric, nullptr);
        double acc = 0.0;
        int hits = 0;
        for (std::size_t r = 0; r < nn.size(); ++r) {
            if (em.labels[static_cast<std::size_t>(nn[r])] ==
                em.labels[static_cast<std::size_t>(q)]) {
                ++hits;
                acc += static_cast<double>(hits) / static_cast<double>(r + 1);
            }
        }
        ap[static_cast<std::size_t>(q)] = acc / std::min(relevant_total, k);
    }
    if (singletons > 0)
        std::cerr << "[eval] warning: " << singletons
                  << " queries have no other member of their class (AP=0)\n";
    double total = 0.0;
    for (double a : ap) total += a;
    return total / em.n;
}

// ------------------------------------------------------------- extraction

EmbeddingMatrix extract_embeddings(SketchModel& model,
                                   const std::vector<SketchRecord>& records,
                                   int batch_size) {
    if (records.empty()) throw ConfigError("extract_embeddings: empty record set");
    EmbeddingMatrix em;
    em.n = static_cast<int>(records.size());
    em.d = model.embed_dim();
    em.model_kind = model_kind_name(model.cfg.kind);
    em.config_hash = model.cfg.config_hash;
    em.manifest_hash = model.cfg.manifest_hash;
    em.vectors.resize(static_cast<std::size_t>(em.n) * em.d);
    em.labels.reserve(records.size());
    em.ids.reserve(records.size());
    for (const auto& r : records) {
        em.labels.push_back(r.category_id);
        em.ids.push_back(r.id());
    }

    const int res = model.cfg.resolution;
    const Polarity pol = model.cfg.polarity;
    for (int start = 0; start < em.n; start += batch_size) {
        const int cur = std::min(batch_size, em.n - start);
        std::vector<RasterSketch> rasters(static_cast<std::size_t>(cur));
#pragma omp parallel for schedule(static)
        for (int i = 0; i < cur; ++i)
            rasters[static_cast<std::size_t>(i)] =
                rasterize(records[static_cast<std::size_t>(start + i)].sketch, res, res, pol);
        ad::NoGradGuard ng;
        Var out = model.embed(Var::constant(to_input_tensor(rasters)));
        if (out.val().dim(1) != em.d) throw ConfigError("embedding dim mismatch");
        for (int i = 0; i < cur; ++i)
            for (int j = 0; j < em.d; ++j)
                em.vectors[static_cast<std::size_t>(start + i) * em.d + j] =
                    static_cast<float>(out.val().v[static_cast<std::size_t>(i) * em.d + j]);
    }
    return em;
}

std::pair<EvalReport, EvalReport> evaluate(SketchModel& model, const DatasetSplit& split,
                                           int k, DistanceMetric metric) {
    auto run = [&](const std::vector<SketchRecord>& recs, const std::string& name) {
        EmbeddingMatrix em = extract_embeddings(model, recs);
        em.split_name = name;
        EvalReport rep;
        rep.split_name = name;
        rep.model_kind = model_kind_name(model.cfg.kind);
        rep.n = em.n;
        rep.d = em.d;
        rep.knn_accuracy = knn_accuracy(em, k, metric);
        rep.map_at_5 = map_at_k(em, k, metric);
        return rep;
    };
    return {run(split.test_known, "known"), run(split.test_unknown, "unknown")};
}

std::string EvalReport::to_json() const {
    json j;
    j["split_name"] = split_name;
    j["knn_accuracy"] = knn_accuracy;
    j["map_at_5"] = map_at_5;
    j["model_kind"] = model_kind;
    j["n"] = n;
    j["d"] = d;
    return j.dump();
}

RetrievalResult query_gallery(const EmbeddingMatrix& gallery, const float* query_vec,
                              int k, DistanceMetric metric, const std::string& query_id) {
    gallery.validate();
    k = std::min(k, gallery.n);
    std::vector<std::pair<double, int>> all(static_cast<std::size_t>(gallery.n));
#pragma omp parallel for schedule(static)
    for (int j = 0; j < gallery.n; ++j)
        all[static_cast<std::size_t>(j)] = {
            row_distance(query_vec, gallery.row(j), gallery.d, metric), j};
    std::partial_sort(all.begin(), all.begin() + k, all.end());
    RetrievalResult res;
    res.query_id = query_id;
    for (int r = 0; r < k; ++r) {
        res.distances.push_back(all[static_cast<std::size_t>(r)].first);
        const int j = all[static_cast<std::size_t>(r)].second;
        res.ranked_ids.push_back(gallery.ids[static_cast<std::size_t>(j)]);
        res.ranked_labels.push_back(gallery.labels[static_cast<std::size_t>(j)]);
    }
    return res;
}

// ---------------------------------------------------------------- file io

namespace {
constexpr char kEmbMagic[] = "SKEMB1\n";

void write_u32(std::ostream& out, std::uint32_t x) {
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((x >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(buf), 4);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) throw IoError("embedding file truncated");
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
    return x;
}
}  // namespace

void EmbeddingMatrix::save(const std::string& path) const {
    validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write embeddings: " + path);
    out.write(kEmbMagic, sizeof(kEmbMagic) - 1);
    json header;
    header["n"] = n;
    header["d"] = d;
    header["model_kind"] = model_kind;
    header["config_hash"] = config_hash;
    header["manifest_hash"] = manifest_hash;
    header["split"] = split_name;
    const std::string htext = header.dump();
    write_u32(out, static_cast<std::uint32_t>(htext.size()));
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    // rows are already little-endian float32 on every platform we target
    out.write(reinterpret_cast<const char*>(vectors.data()),
              static_cast<std::streamsize>(vectors.size() * sizeof(float)));
    for (int lab : labels) write_u32(out, static_cast<std::uint32_t>(lab));
    for (const auto& id : ids) {
        write_u32(out, static_cast<std::uint32_t>(id.size()));
        out.write(id.data(), static_cast<std::streamsize>(id.size()));
    }
    if (!out) throw IoError("embedding write failed: " + path);
}

EmbeddingMatrix EmbeddingMatrix::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read embeddings: " + path);
    char magic[sizeof(kEmbMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kEmbMagic, sizeof(magic)) != 0)
        throw ParseError("not an embedding file: " + path);
    const std::uint32_t hlen = read_u32(in);
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    json header;
    try {
        header = json::parse(htext);
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad embedding header: ") + e.what());
    }
    EmbeddingMatrix em;
    em.n = header.at("n").get<int>();
    em.d = header.at("d").get<int>();
    em.model_kind = header.value("model_kind", "");
    em.config_hash = header.value("config_hash", "");
    em.manifest_hash = header.value("manifest_hash", "");
    em.split_name = header.value("split", "");
    em.vectors.resize(static_cast<std::size_t>(em.n) * em.d);
    in.read(reinterpret_cast<char*>(em.vectors.data()),
            static_cast<std::streamsize>(em.vectors.size() * sizeof(float)));
    em.labels.resize(static_cast<std::size_t>(em.n));
    for (auto& lab : em.labels) lab = static_cast<int>(read_u32(in));
    em.ids.resize(static_cast<std::size_t>(em.n));
    for (auto& id : em.ids) {
        const std::uint32_t len = read_u32(in);
        id.assign(len, '\0');
        in.read(id.data(), static_cast<std::streamsize>(len));
    }
    if (!in) throw IoError("embedding file truncated: " + path);
    em.validate();
    return em;
}

// -------------------------------------------------------------- projection

std::vector<ProjectedPoint> project_2d(const EmbeddingMatrix& em, int n_classes,
                                       std::uint64_t seed) {
    em.validate();
    std::vector<int> distinct;
    {
        std::map<int, bool> seen;
        for (int lab : em.labels)
            if (!seen.count(lab)) {
                seen[lab] = true;
                distinct.push_back(lab);
            }
    }
    std::sort(distinct.begin(), distinct.end());
    if (static_cast<int>(distinct.size()) < n_classes)
        throw ConfigError("project_2d: only " + std::to_string(distinct.size()) +
                          " classes available, need " + std::to_string(n_classes));
    Rng rng(seed);
    rng.shuffle(distinct);
    distinct.resize(static_cast<std::size_t>(n_classes));
    std::sort(distinct.begin(), distinct.end());

    std::vector<int> rows;
    for (int i = 0; i < em.n; ++i)
        if (std::binary_search(distinct.begin(), distinct.end(),
                               em.labels[static_cast<std::size_t>(i)]))
            rows.push_back(i);

    const int n = static_cast<int>(rows.size());
    std::vector<double> X(static_cast<std::size_t>(n) * em.d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < em.d; ++j)
            X[static_cast<std::size_t>(i) * em.d + j] =
                em.row(rows[static_cast<std::size_t>(i)])[j];

    const double perplexity = std::min(30.0, std::max(2.0, (n - 1) / 3.0));
    std::vector<double> Y = tsne_embed(X, n, em.d, perplexity, 1000, seed);

    std::vector<ProjectedPoint> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i)].id = em.ids[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])];
        out[static_cast<std::size_t>(i)].label = em.labels[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])];
        out[static_cast<std::size_t>(i)].x = Y[static_cast<std::size_t>(i) * 2];
        out[static_cast<std::size_t>(i)].y = Y[static_cast<std::size_t>(i) * 2 + 1];
    }
    return out;
}

void write_projection_csv(const std::vector<ProjectedPoint>& pts, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write projection csv: " + path);
    out << "id,label,x,y\n";
    char buf[64];
    for (const auto& p : pts) {
        std::snprintf(buf, sizeof(buf), "%.6f", p.x);
        out << p.id << "," << p.label << "," << buf << ",";
        std::snprintf(buf, sizeof(buf), "%.6f", p.y);
        out << buf << "\n";
    }
}

}  // namespace sketchssl
