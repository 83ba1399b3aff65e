#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evcp/dataset.hpp"
#include "evcp/matrix.hpp"

namespace evcp {

/// POI counts per area; counts is [areas x categories].
struct PoiCorpus {
  std::vector<std::string> area_ids;
  std::vector<std::string> categories;
  std::vector<std::int64_t> counts;

  std::size_t areas() const { return area_ids.size(); }
  std::size_t category_count() const { return categories.size(); }
  std::int64_t count(std::size_t area, std::size_t category) const {
    return counts[area * categories.size() + category];
  }
};

/// TF-IDF importance per (area, category), same layout as the corpus:
///   u = (f / sum_k f_k) * ln(N / (1 + df)),
/// with df the number of areas holding at least one POI of the category.
Matrix tfidf(const PoiCorpus& corpus);

struct KMeansOptions {
  unsigned restarts = 10;
  unsigned max_iterations = 300;
  double tolerance = 1e-6;
};

struct KMeansResult {
  std::vector<std::size_t> labels;
  Matrix centroids;
  double inertia = 0.0;
};

/// Lloyd iterations from k-means++ seeds; keeps the restart with the lowest
/// inertia. Clusters that empty out are reseeded with the point farthest from
/// its centroid.
KMeansResult kmeans(const Matrix& rows, std::size_t clusters, std::uint64_t seed,
                    const KMeansOptions& options = {});

/// Sum of squared distances of rows to the mean of their label group.
double partition_inertia(const Matrix& rows, std::span<const std::size_t> labels);

struct RegionStructure {
  std::size_t areas = 0;
  std::size_t clusters = 0;
  std::vector<std::size_t> labels;
  /// [areas x clusters], 0/1.
  Matrix incidence;
  /// [areas x areas], 0/1, symmetric, zero diagonal.
  Matrix adjacency;
  std::vector<bool> isolated;

  std::vector<std::size_t> neighbors(std::size_t area) const;
  std::vector<std::size_t> members(std::size_t cluster) const;
};

/// Incidence from labels (one hyperedge per label, labels must be dense
/// 0..C-1 with every label used) and symmetric adjacency from neighbor pairs.
RegionStructure build_structure(std::span<const std::size_t> labels,
                                std::span<const std::pair<std::size_t, std::size_t>> pairs);

struct PearsonResult {
  Matrix coefficients;
  Matrix mask;
  /// Areas with zero variance; their off-diagonal coefficients are 0.
  std::vector<std::size_t> zero_variance;
};

/// Pearson coefficient between area series (rows of values) and a mask of
/// coefficients >= threshold.
PearsonResult pearson_matrix(const Matrix& values, double threshold);
PearsonResult pearson_matrix(const DemandSeries& demand, double threshold);

/// Chance-corrected agreement of two labelings of the same items.
double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b);

// File formats.

/// poi.csv: header area_id,<category...>; nonnegative integer counts.
PoiCorpus read_poi_csv(const std::filesystem::path& path);
void write_poi_csv(const std::filesystem::path& path, const PoiCorpus& corpus);
/// Reorders the corpus rows to match `area_ids`; every id must be present.
PoiCorpus align_corpus(const PoiCorpus& corpus, std::span<const std::string> area_ids);

/// adjacency.txt: one "area_a area_b" pair per line, resolved against area_ids.
std::vector<std::pair<std::size_t, std::size_t>> read_adjacency(const std::filesystem::path& path,
                                                                std::span<const std::string> area_ids);
void write_adjacency(const std::filesystem::path& path,
                     std::span<const std::pair<std::size_t, std::size_t>> pairs,
                     std::span<const std::string> area_ids);

/// Labels file (area_id,label) used for ground-truth groups.
std::vector<std::size_t> read_labels_csv(const std::filesystem::path& path,
                                         std::span<const std::string> area_ids);
void write_labels_csv(const std::filesystem::path& path, std::span<const std::string> area_ids,
                      std::span<const std::size_t> labels);

/// clusters.json: area -> label map, TF-IDF rows, incidence and adjacency.
void write_clusters_json(const std::filesystem::path& path, std::span<const std::string> area_ids,
                         const std::vector<std::string>& categories, const Matrix& tfidf_matrix,
                         const RegionStructure& structure, double inertia);
RegionStructure read_clusters_json(const std::filesystem::path& path, std::span<const std::string> area_ids);

void write_matrix_csv(const std::filesystem::path& path, std::span<const std::string> ids, const Matrix& m);

}  // namespace evcp
