#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sketchssl/common.hpp"
#include "sketchssl/data.hpp"

namespace sketchssl {

class SketchModel;

enum class DistanceMetric { Euclidean, Cosine };
std::string metric_name(DistanceMetric m);
DistanceMetric metric_from_name(const std::string& s);

// N x D embedding rows with aligned labels/ids; the unit of retrieval
// evaluation. Stored as little-endian float32 on disk.
struct EmbeddingMatrix {
    int n = 0, d = 0;
    std::vector<float> vectors;  // row major n*d
    std::vector<int> labels;
    std::vector<std::string> ids;
    std::string model_kind;
    std::string config_hash;
    std::string manifest_hash;
    std::string split_name;

    const float* row(int i) const { return vectors.data() + static_cast<std::size_t>(i) * d; }
    void validate() const;

    void save(const std::string& path) const;
    static EmbeddingMatrix load(const std::string& path);
};

// Top-k retrieval for one query.
struct RetrievalResult {
    std::string query_id;
    std::vector<std::string> ranked_ids;
    std::vector<int> ranked_labels;
    std::vector<double> distances;  // non-decreasing
};

struct EvalReport {
    double knn_accuracy = 0.0;
    double map_at_5 = 0.0;
    std::string split_name;
    std::string model_kind;
    int n = 0, d = 0;

    std::string to_json() const;
};

// Leave-one-out kNN classification accuracy. Majority vote over the k
// nearest; ties go to the tied class whose nearest member is closest.
double knn_accuracy(const EmbeddingMatrix& em, int k = 5,
                    DistanceMetric metric = DistanceMetric::Euclidean);

// mean AP@k: per query, AP = sum_i Prec@i * rel(i) / min(R, k) over the
// gallery excluding the query; single-member classes score 0 and warn.
double map_at_k(const EmbeddingMatrix& em, int k = 5,
                DistanceMetric metric = DistanceMetric::Euclidean);

// Batched embedding extraction (eval mode, deterministic).
EmbeddingMatrix extract_embeddings(SketchModel& model,
                                   const std::vector<SketchRecord>& records,
                                   int batch_size = 32);

// Run extract + both metrics on test_known and test_unknown.
std::pair<EvalReport, EvalReport> evaluate(SketchModel& model, const DatasetSplit& split,
                                           int k = 5,
                                           DistanceMetric metric = DistanceMetric::Euclidean);

// Retrieval against a fixed gallery for external queries (edge maps).
RetrievalResult query_gallery(const EmbeddingMatrix& gallery, const float* query_vec,
                              int k, DistanceMetric metric = DistanceMetric::Euclidean,
                              const std::string& query_id = "query");

// 2-D projection of a seeded random subset of n_classes classes via t-SNE.
struct ProjectedPoint {
    std::string id;
    int label = 0;
    double x = 0.0, y = 0.0;
};
std::vector<ProjectedPoint> project_2d(const EmbeddingMatrix& em, int n_classes,
                                       std::uint64_t seed);
void write_projection_csv(const std::vector<ProjectedPoint>& pts, const std::string& path);

// Exact t-SNE (O(n^2)); rows of X are points. Returns n x 2 coordinates.
std::vector<double> tsne_embed(const std::vector<double>& X, int n, int d,
                               double perplexity, int iterations, std::uint64_t seed);

}  // namespace sketchssl
