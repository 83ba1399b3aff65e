#include "evcp/region_features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "evcp/error.hpp"

namespace evcp {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string_view rest = line;
  while (true) {
    const auto pos = rest.find(sep);
    out.push_back(trim(rest.substr(0, pos)));
    if (pos == std::string_view::npos) break;
    rest.remove_prefix(pos + 1);
  }
  return out;
}

std::map<std::string, std::size_t> index_of(std::span<const std::string> ids) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;
  return index;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

double choose2(double n) { return n * (n - 1.0) / 2.0; }

}  // namespace

Matrix tfidf(const PoiCorpus& corpus) {
  const std::size_t n = corpus.areas();
  const std::size_t k = corpus.category_count();
  require(n >= 1, ErrorKind::insufficient_data, "tfidf: corpus has no areas");
  require(corpus.counts.size() == n * k, ErrorKind::shape, "tfidf: count matrix has the wrong size");
  std::vector<double> totals(n, 0.0);
  std::vector<double> df(k, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t c = 0; c < k; ++c) {
      const auto f = corpus.count(a, c);
      require(f >= 0, ErrorKind::validation, "tfidf: negative count for area " + corpus.area_ids[a]);
      totals[a] += static_cast<double>(f);
      if (f > 0) df[c] += 1.0;
    }
  for (std::size_t a = 0; a < n; ++a)
    require(totals[a] > 0.0, ErrorKind::degenerate, "tfidf: area " + corpus.area_ids[a] + " has no POIs");

  Matrix u(n, k);
  for (std::size_t c = 0; c < k; ++c) {
    const double idf = std::log(static_cast<double>(n) / (1.0 + df[c]));
    for (std::size_t a = 0; a < n; ++a) {
      const auto f = corpus.count(a, c);
      u(a, c) = f == 0 ? 0.0 : (static_cast<double>(f) / totals[a]) * idf;
    }
  }
  return u;
}

double partition_inertia(const Matrix& rows, std::span<const std::size_t> labels) {
  require(labels.size() == rows.rows, ErrorKind::shape, "partition_inertia: label count mismatch");
  std::map<std::size_t, std::pair<std::vector<double>, std::size_t>> groups;
  for (std::size_t i = 0; i < rows.rows; ++i) {
    auto& [acc, count] = groups[labels[i]];
    acc.resize(rows.cols, 0.0);
    for (std::size_t j = 0; j < rows.cols; ++j) acc[j] += rows(i, j);
    ++count;
  }
  for (auto& [label, g] : groups)
    for (double& v : g.first) v /= static_cast<double>(g.second);
  double inertia = 0.0;
  for (std::size_t i = 0; i < rows.rows; ++i) inertia += squared_distance(rows.row(i), groups[labels[i]].first);
  return inertia;
}

KMeansResult kmeans(const Matrix& x, std::size_t clusters, std::uint64_t seed, const KMeansOptions& options) {
  const std::size_t n = x.rows;
  const std::size_t d = x.cols;
  require(clusters >= 1 && clusters <= n, ErrorKind::config,
          "kmeans: cluster count " + std::to_string(clusters) + " must be in [1, " + std::to_string(n) + "]");
  require(options.restarts >= 1, ErrorKind::config, "kmeans: at least one restart is required");

  std::mt19937_64 rng(seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();

  for (unsigned restart = 0; restart < options.restarts; ++restart) {
    // k-means++ seeding.
    Matrix centroids(clusters, d);
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::size_t first = pick(rng);
    std::copy(x.row(first).begin(), x.row(first).end(), centroids.row(0).begin());
    for (std::size_t c = 1; c < clusters; ++c) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        nearest[i] = std::min(nearest[i], squared_distance(x.row(i), centroids.row(c - 1)));
        total += nearest[i];
      }
      std::size_t chosen = 0;
      if (total > 0.0) {
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(rng);
        chosen = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          target -= nearest[i];
          if (target < 0.0 && nearest[i] > 0.0) {
            chosen = i;
            break;
          }
        }
      } else {
        chosen = pick(rng);
      }
      std::copy(x.row(chosen).begin(), x.row(chosen).end(), centroids.row(c).begin());
    }

    std::vector<std::size_t> labels(n, 0);
    for (unsigned iter = 0; iter < options.max_iterations; ++iter) {
      for (std::size_t i = 0; i < n; ++i) {
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < clusters; ++c) {
          const double dist = squared_distance(x.row(i), centroids.row(c));
          if (dist < best_d) {
            best_d = dist;
            labels[i] = c;
          }
        }
      }
      // Repair empty clusters with the point farthest from its centroid.
      std::vector<std::size_t> sizes(clusters, 0);
      for (auto l : labels) ++sizes[l];
      for (std::size_t c = 0; c < clusters; ++c) {
        if (sizes[c] > 0) continue;
        std::size_t far = n;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (sizes[labels[i]] <= 1) continue;
          const double dist = squared_distance(x.row(i), centroids.row(labels[i]));
          if (dist > far_d) {
            far_d = dist;
            far = i;
          }
        }
        if (far == n) break;
        --sizes[labels[far]];
        labels[far] = c;
        sizes[c] = 1;
      }

      Matrix next(clusters, d);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) next(labels[i], j) += x(i, j);
      double shift = 0.0;
      for (std::size_t c = 0; c < clusters; ++c) {
        if (sizes[c] == 0) {
          std::copy(centroids.row(c).begin(), centroids.row(c).end(), next.row(c).begin());
          continue;
        }
        for (std::size_t j = 0; j < d; ++j) next(c, j) /= static_cast<double>(sizes[c]);
        shift = std::max(shift, std::sqrt(squared_distance(next.row(c), centroids.row(c))));
      }
      centroids = std::move(next);
      if (shift <= options.tolerance) break;
    }

    // Final assignment against the converged centroids, keeping every cluster
    // occupied.
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best_d = std::numeric_limits<double>::infinity();
      std::size_t best_c = labels[i];
      for (std::size_t c = 0; c < clusters; ++c) {
        const double dist = squared_distance(x.row(i), centroids.row(c));
        if (dist < best_d) {
          best_d = dist;
          best_c = c;
        }
      }
      labels[i] = best_c;
    }
    std::vector<std::size_t> sizes(clusters, 0);
    for (auto l : labels) ++sizes[l];
    bool complete = std::all_of(sizes.begin(), sizes.end(), [](std::size_t s) { return s > 0; });
    if (!complete) continue;
    inertia = partition_inertia(x, labels);
    if (inertia < best.inertia) {
      best.inertia = inertia;
      best.labels = labels;
      best.centroids = centroids;
    }
  }
  if (best.labels.empty()) {
    // Duplicate rows can make every restart collapse; fall back to a valid
    // partition that spreads the leading rows over the clusters.
    best.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) best.labels[i] = i < clusters ? i : 0;
    best.inertia = partition_inertia(x, best.labels);
    best.centroids = Matrix(clusters, d);
    std::vector<std::size_t> sizes(clusters, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++sizes[best.labels[i]];
      for (std::size_t j = 0; j < d; ++j) best.centroids(best.labels[i], j) += x(i, j);
    }
    for (std::size_t c = 0; c < clusters; ++c)
      for (std::size_t j = 0; j < d; ++j) best.centroids(c, j) /= static_cast<double>(sizes[c]);
  }
  return best;
}

std::vector<std::size_t> RegionStructure::neighbors(std::size_t area) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < areas; ++j)
    if (adjacency(area, j) != 0.0) out.push_back(j);
  return out;
}

std::vector<std::size_t> RegionStructure::members(std::size_t cluster) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < areas; ++i)
    if (incidence(i, cluster) != 0.0) out.push_back(i);
  return out;
}

RegionStructure build_structure(std::span<const std::size_t> labels,
                                std::span<const std::pair<std::size_t, std::size_t>> pairs) {
  const std::size_t n = labels.size();
  require(n >= 1, ErrorKind::structure, "build_structure: no areas");
  const std::size_t clusters = *std::max_element(labels.begin(), labels.end()) + 1;
  RegionStructure s;
  s.areas = n;
  s.clusters = clusters;
  s.labels.assign(labels.begin(), labels.end());
  s.incidence = Matrix(n, clusters);
  for (std::size_t i = 0; i < n; ++i) s.incidence(i, labels[i]) = 1.0;
  for (std::size_t c = 0; c < clusters; ++c) {
    bool used = false;
    for (std::size_t i = 0; i < n && !used; ++i) used = labels[i] == c;
    require(used, ErrorKind::structure, "build_structure: cluster " + std::to_string(c) + " has no members");
  }
  s.adjacency = Matrix(n, n);
  for (const auto& [a, b] : pairs) {
    require(a < n && b < n, ErrorKind::reference,
            "build_structure: pair (" + std::to_string(a) + ", " + std::to_string(b) +
                ") references an unknown area");
    if (a == b) continue;
    s.adjacency(a, b) = 1.0;
    s.adjacency(b, a) = 1.0;
  }
  s.isolated.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = s.adjacency.row(i);
    s.isolated[i] = std::none_of(r.begin(), r.end(), [](double v) { return v != 0.0; });
  }
  return s;
}

PearsonResult pearson_matrix(const Matrix& values, double threshold) {
  const std::size_t n = values.rows;
  const std::size_t t = values.cols;
  require(t >= 2, ErrorKind::insufficient_data, "pearson_matrix: need at least 2 time steps");
  std::vector<std::vector<double>> centered(n, std::vector<double>(t));
  std::vector<double> norm(n, 0.0);
  PearsonResult r;
  for (std::size_t i = 0; i < n; ++i) {
    double mu = 0.0;
    for (std::size_t k = 0; k < t; ++k) mu += values(i, k);
    mu /= static_cast<double>(t);
    for (std::size_t k = 0; k < t; ++k) {
      centered[i][k] = values(i, k) - mu;
      norm[i] += centered[i][k] * centered[i][k];
    }
    norm[i] = std::sqrt(norm[i]);
    if (norm[i] == 0.0) r.zero_variance.push_back(i);
  }
  r.coefficients = Matrix(n, n);
  r.mask = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    r.coefficients(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double c = 0.0;
      if (norm[i] > 0.0 && norm[j] > 0.0) {
        for (std::size_t k = 0; k < t; ++k) c += centered[i][k] * centered[j][k];
        c = std::clamp(c / (norm[i] * norm[j]), -1.0, 1.0);
      }
      r.coefficients(i, j) = c;
      r.coefficients(j, i) = c;
    }
  }
  for (std::size_t i = 0; i < r.mask.data.size(); ++i) r.mask.data[i] = r.coefficients.data[i] >= threshold ? 1.0 : 0.0;
  return r;
}

PearsonResult pearson_matrix(const DemandSeries& demand, double threshold) {
  return pearson_matrix(demand.values, threshold);
}

double adjusted_rand_index(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  require(a.size() == b.size(), ErrorKind::shape, "adjusted_rand_index: labelings differ in length");
  const double n = static_cast<double>(a.size());
  std::map<std::pair<std::size_t, std::size_t>, double> table;
  std::map<std::size_t, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  double index = 0.0, sum_rows = 0.0, sum_cols = 0.0;
  for (const auto& [k, v] : table) index += choose2(v);
  for (const auto& [k, v] : rows) sum_rows += choose2(v);
  for (const auto& [k, v] : cols) sum_cols += choose2(v);
  const double total = choose2(n);
  const double expected = total > 0.0 ? sum_rows * sum_cols / total : 0.0;
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

PoiCorpus read_poi_csv(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::parse, path.string() + ": row 1: missing header");
  auto header = split(line, ',');
  require(header.size() >= 2, ErrorKind::parse, path.string() + ": row 1: header needs area_id and categories");
  PoiCorpus corpus;
  corpus.categories.assign(header.begin() + 1, header.end());
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    auto cells = split(line, ',');
    require(cells.size() == header.size(), ErrorKind::parse,
            path.string() + ": row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                " columns");
    corpus.area_ids.push_back(cells[0]);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      std::int64_t v = 0;
      auto [ptr, ec] = std::from_chars(cells[c].data(), cells[c].data() + cells[c].size(), v);
      require(ec == std::errc() && ptr == cells[c].data() + cells[c].size() && v >= 0, ErrorKind::parse,
              path.string() + ": row " + std::to_string(row) + ", column " + std::to_string(c + 1) +
                  ": not a nonnegative integer: '" + cells[c] + "'");
      corpus.counts.push_back(v);
    }
  }
  require(!corpus.area_ids.empty(), ErrorKind::parse, path.string() + ": no areas");
  return corpus;
}

void write_poi_csv(const fs::path& path, const PoiCorpus& corpus) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out << "area_id";
  for (const auto& c : corpus.categories) out << ',' << c;
  out << '\n';
  for (std::size_t a = 0; a < corpus.areas(); ++a) {
    out << corpus.area_ids[a];
    for (std::size_t c = 0; c < corpus.category_count(); ++c) out << ',' << corpus.count(a, c);
    out << '\n';
  }
}

PoiCorpus align_corpus(const PoiCorpus& corpus, std::span<const std::string> area_ids) {
  const auto index = index_of(corpus.area_ids);
  PoiCorpus out;
  out.categories = corpus.categories;
  for (const auto& id : area_ids) {
    auto it = index.find(id);
    require(it != index.end(), ErrorKind::reference, "POI corpus has no row for area " + id);
    out.area_ids.push_back(id);
    for (std::size_t c = 0; c < corpus.category_count(); ++c) out.counts.push_back(corpus.count(it->second, c));
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> read_adjacency(const fs::path& path,
                                                                std::span<const std::string> area_ids) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  const auto index = index_of(area_ids);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream is(t);
    std::string a, b, extra;
    require(static_cast<bool>(is >> a >> b) && !(is >> extra), ErrorKind::parse,
            path.string() + ": row " + std::to_string(row) + ": expected two area ids");
    auto ia = index.find(a);
    auto ib = index.find(b);
    require(ia != index.end(), ErrorKind::reference, path.string() + ": row " + std::to_string(row) + ": unknown area " + a);
    require(ib != index.end(), ErrorKind::reference, path.string() + ": row " + std::to_string(row) + ": unknown area " + b);
    pairs.emplace_back(ia->second, ib->second);
  }
  return pairs;
}

void write_adjacency(const fs::path& path, std::span<const std::pair<std::size_t, std::size_t>> pairs,
                     std::span<const std::string> area_ids) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  for (const auto& [a, b] : pairs) out << area_ids[a] << ' ' << area_ids[b] << '\n';
}

std::vector<std::size_t> read_labels_csv(const fs::path& path, std::span<const std::string> area_ids) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  const auto index = index_of(area_ids);
  std::vector<std::size_t> labels(area_ids.size());
  std::vector<bool> seen(area_ids.size(), false);
  std::string line;
  std::getline(in, line);
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    auto cells = split(line, ',');
    require(cells.size() == 2, ErrorKind::parse, path.string() + ": row " + std::to_string(row) + ": expected area_id,label");
    auto it = index.find(cells[0]);
    require(it != index.end(), ErrorKind::reference, path.string() + ": unknown area " + cells[0]);
    labels[it->second] = static_cast<std::size_t>(std::stoul(cells[1]));
    seen[it->second] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    require(seen[i], ErrorKind::reference, path.string() + ": no label for area " + area_ids[i]);
  return labels;
}

void write_labels_csv(const fs::path& path, std::span<const std::string> area_ids,
                      std::span<const std::size_t> labels) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out << "area_id,label\n";
  for (std::size_t i = 0; i < area_ids.size(); ++i) out << area_ids[i] << ',' << labels[i] << '\n';
}

void write_clusters_json(const fs::path& path, std::span<const std::string> area_ids,
                         const std::vector<std::string>& categories, const Matrix& u,
                         const RegionStructure& s, double inertia) {
  json j;
  j["clusters"] = s.clusters;
  j["inertia"] = inertia;
  j["categories"] = categories;
  json labels = json::object();
  json rows = json::object();
  for (std::size_t i = 0; i < area_ids.size(); ++i) {
    labels[area_ids[i]] = s.labels[i];
    auto r = u.row(i);
    rows[area_ids[i]] = std::vector<double>(r.begin(), r.end());
  }
  j["labels"] = labels;
  j["tfidf"] = rows;
  json incidence = json::array();
  for (std::size_t i = 0; i < s.areas; ++i) {
    auto r = s.incidence.row(i);
    std::vector<int> row;
    for (double v : r) row.push_back(static_cast<int>(v));
    incidence.push_back(row);
  }
  j["incidence"] = incidence;
  json pairs = json::array();
  for (std::size_t a = 0; a < s.areas; ++a)
    for (std::size_t b = a + 1; b < s.areas; ++b)
      if (s.adjacency(a, b) != 0.0) pairs.push_back({area_ids[a], area_ids[b]});
  j["adjacency"] = pairs;
  json isolated = json::array();
  for (std::size_t a = 0; a < s.areas; ++a)
    if (s.isolated[a]) isolated.push_back(area_ids[a]);
  j["isolated"] = isolated;
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out << j.dump(1) << '\n';
}

RegionStructure read_clusters_json(const fs::path& path, std::span<const std::string> area_ids) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  json j;
  try {
    in >> j;
    const auto index = index_of(area_ids);
    std::vector<std::size_t> labels(area_ids.size());
    const auto& lab = j.at("labels");
    for (std::size_t i = 0; i < area_ids.size(); ++i) {
      require(lab.contains(area_ids[i]), ErrorKind::reference, path.string() + ": no label for area " + area_ids[i]);
      labels[i] = lab.at(area_ids[i]).get<std::size_t>();
    }
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (const auto& p : j.at("adjacency")) {
      const auto a = p.at(0).get<std::string>();
      const auto b = p.at(1).get<std::string>();
      require(index.count(a) && index.count(b), ErrorKind::reference, path.string() + ": unknown area in adjacency");
      pairs.emplace_back(index.at(a), index.at(b));
    }
    return build_structure(labels, pairs);
  } catch (const json::exception& e) {
    raise(ErrorKind::parse, path.string() + ": " + e.what());
  }
}

void write_matrix_csv(const fs::path& path, std::span<const std::string> ids, const Matrix& m) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot write " + path.string());
  out << "area_id";
  for (const auto& id : ids) out << ',' << id;
  out << '\n';
  char buf[40];
  for (std::size_t i = 0; i < m.rows; ++i) {
    out << ids[i];
    for (std::size_t j = 0; j < m.cols; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      out << ',' << buf;
    }
    out << '\n';
  }
}

}  // namespace evcp
