#pragma once

// Delimited-text datasets: loading, z-score standardization, seeded splits
// and per-epoch batching, plus a binary cache ("BFID").

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <variant>
#include <vector>

#include "bfi/checkpoint.hpp"
#include "bfi/linalg.hpp"

namespace bfi {

/// Raised for unreadable or malformed data files.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Matrix<float> features;            // N x D
  std::vector<std::uint32_t> labels;  // dense, 0-based
  std::size_t num_classes = 0;
  std::vector<std::string> feature_names;
  std::int64_t label_base = 0;  // original label = dense label + label_base

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }

  Vector<float> row(std::size_t i) const {
    auto r = features.row(i);
    return Vector<float>(std::vector<float>(r.begin(), r.end()));
  }
};

/// Which column holds the label: first, last, or a zero-based index.
struct LabelColumn {
  enum class Where { First, Last, Index } where = Where::Last;
  std::size_t index = 0;

  static LabelColumn first() { return {Where::First, 0}; }
  static LabelColumn last() { return {Where::Last, 0}; }
  static LabelColumn at(std::size_t i) { return {Where::Index, i}; }

  std::size_t resolve(std::size_t ncols) const {
    switch (where) {
      case Where::First: return 0;
      case Where::Last: return ncols - 1;
      case Where::Index: return index;
    }
    return ncols - 1;
  }
};

struct LoadOptions {
  char delimiter = ',';
  LabelColumn label_column = LabelColumn::last();
  std::int64_t label_base = 0;
  bool header = false;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_line(std::string_view line,
                                                char delim) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    cells.push_back(trim(line.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return cells;
}

template <class U>
bool parse_number(std::string_view s, U& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

[[noreturn]] inline void load_fail(const std::string& path, std::size_t line,
                                   const std::string& what) {
  throw LoadError(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace detail

inline Dataset load_delimited(const std::string& path,
                              const LoadOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw LoadError(path + ": cannot open file");

  Dataset ds;
  ds.label_base = opt.label_base;
  std::vector<float> values;
  std::size_t ncols = 0;
  std::size_t label_col = 0;
  std::size_t lineno = 0;
  std::int64_t max_label = -1;
  bool header_pending = opt.header;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    const auto text = detail::trim(line);
    if (text.empty()) continue;
    const auto cells = detail::split_line(text, opt.delimiter);
    if (ncols == 0) {
      ncols = cells.size();
      if (ncols < 2) detail::load_fail(path, lineno, "need at least 2 columns");
      label_col = opt.label_column.resolve(ncols);
      if (label_col >= ncols)
        detail::load_fail(path, lineno,
                          "label column " + std::to_string(label_col) +
                              " out of range for " + std::to_string(ncols) +
                              " columns");
    } else if (cells.size() != ncols) {
      detail::load_fail(path, lineno,
                        "expected " + std::to_string(ncols) + " columns, got " +
                            std::to_string(cells.size()));
    }
    if (header_pending) {
      header_pending = false;
      for (std::size_t j = 0; j < ncols; ++j)
        if (j != label_col) ds.feature_names.emplace_back(cells[j]);
      continue;
    }
    for (std::size_t j = 0; j < ncols; ++j) {
      if (j == label_col) {
        std::int64_t raw;
        if (!detail::parse_number(cells[j], raw))
          detail::load_fail(path, lineno,
                            "non-integer label '" + std::string(cells[j]) + "'");
        const std::int64_t lab = raw - opt.label_base;
        if (lab < 0 || lab > std::numeric_limits<std::int32_t>::max())
          detail::load_fail(path, lineno,
                            "label " + std::to_string(raw) +
                                " out of range for base " +
                                std::to_string(opt.label_base));
        ds.labels.push_back(static_cast<std::uint32_t>(lab));
        max_label = std::max(max_label, lab);
        continue;
      }
      float v;
      if (!detail::parse_number(cells[j], v) || !std::isfinite(v))
        detail::load_fail(path, lineno,
                          "non-numeric cell '" + std::string(cells[j]) +
                              "' in column " + std::to_string(j));
      values.push_back(v);
    }
  }
  if (ds.labels.empty()) throw LoadError(path + ": no data rows");
  const std::size_t n = ds.labels.size();
  ds.features = Matrix<float>(n, ncols - 1);
  std::copy(values.begin(), values.end(), ds.features.data());
  ds.num_classes = static_cast<std::size_t>(max_label + 1);
  return ds;
}

/// Writes the dataset back as delimited text with the label last, using the
/// original label values. Floats are printed with round-trip precision.
inline void save_delimited(const Dataset& ds, const std::string& path,
                           char delimiter = ',') {
  std::ofstream out(path);
  if (!out) throw LoadError(path + ": cannot open for writing");
  char buf[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (float v : ds.features.row(i)) {
      const auto r = std::to_chars(buf, buf + sizeof buf, v);
      out.write(buf, r.ptr - buf);
      out.put(delimiter);
    }
    out << static_cast<std::int64_t>(ds.labels[i]) + ds.label_base << '\n';
  }
}

// ---------------------------------------------------------------------------

struct StandardizeStats {
  Vector<double> mean;
  Vector<double> std;  // population std, floored at kStdFloor

  static constexpr double kStdFloor = 1e-8;
};

/// Applies train-split statistics; columns whose std hit the floor map to 0.
inline Dataset apply_standardize(const StandardizeStats& st, const Dataset& ds) {
  if (st.mean.size() != ds.dim())
    detail::fail("apply_standardize: stats for ", st.mean.size(),
                 " columns, dataset has ", ds.dim());
  Dataset out = ds;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto r = out.features.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) {
      r[j] = st.std[j] <= StandardizeStats::kStdFloor
                 ? 0.0f
                 : static_cast<float>((r[j] - st.mean[j]) / st.std[j]);
    }
  }
  return out;
}

inline std::pair<StandardizeStats, Dataset> standardize(const Dataset& train) {
  const std::size_t n = train.size();
  const std::size_t d = train.dim();
  StandardizeStats st{Vector<double>(d), Vector<double>(d)};
  for (std::size_t i = 0; i < n; ++i) {
    auto r = train.features.row(i);
    for (std::size_t j = 0; j < d; ++j) st.mean[j] += r[j];
  }
  for (auto& m : st.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = train.features.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double c = r[j] - st.mean[j];
      st.std[j] += c * c;
    }
  }
  for (auto& s : st.std)
    s = std::max(std::sqrt(s / static_cast<double>(n)), StandardizeStats::kStdFloor);
  return {st, apply_standardize(st, train)};
}

// ---------------------------------------------------------------------------

inline Dataset take_rows(const Dataset& ds, const std::vector<std::size_t>& idx) {
  Dataset out;
  out.num_classes = ds.num_classes;
  out.feature_names = ds.feature_names;
  out.label_base = ds.label_base;
  out.features = Matrix<float>(idx.size(), ds.dim());
  out.labels.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= ds.size())
      detail::fail("take_rows: index ", idx[i], " >= ", ds.size());
    auto src = ds.features.row(idx[i]);
    std::copy(src.begin(), src.end(), out.features.row(i).begin());
    out.labels.push_back(ds.labels[idx[i]]);
  }
  return out;
}

namespace detail {
inline constexpr std::uint64_t kSplitStream = 2;
inline constexpr std::uint64_t kBatchStream = 3;
inline constexpr std::uint64_t kSubsetStream = 4;
}  // namespace detail

/// Seeded shuffle of row indices, then prefix (train) / suffix (test).
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction,
                                         std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    detail::fail("split: train_fraction must be in (0, 1), got ", train_fraction);
  const std::size_t n = ds.size();
  const auto n_train =
      static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n)
    detail::fail("split: fraction ", train_fraction, " of ", n,
                 " rows leaves an empty side");
  SeededRng rng(derive_seed(seed, detail::kSplitStream));
  const auto p = sample_permutation(n, rng).map();
  return {take_rows(ds, {p.begin(), p.begin() + n_train}),
          take_rows(ds, {p.begin() + n_train, p.end()})};
}

/// A seeded random subset of `n` rows (all rows when n >= size).
inline Dataset subsample(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  if (n == 0 || n >= ds.size()) return ds;
  SeededRng rng(derive_seed(seed, detail::kSubsetStream));
  const auto p = sample_permutation(ds.size(), rng).map();
  return take_rows(ds, {p.begin(), p.begin() + n});
}

/// Index slices for one epoch, reshuffled per (seed, epoch). The last batch
/// may be short.
inline std::vector<std::vector<std::size_t>> batches(std::size_t n,
                                                     std::size_t batch_size,
                                                     std::uint64_t seed,
                                                     std::uint64_t epoch) {
  if (batch_size == 0) detail::fail("batches: batch_size must be >= 1");
  std::vector<std::vector<std::size_t>> out;
  if (n == 0) return out;
  SeededRng rng(derive_seed(derive_seed(seed, detail::kBatchStream), epoch));
  const auto p = sample_permutation(n, rng).map();
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(p.begin() + start, p.begin() + end);
  }
  return out;
}

inline std::vector<std::vector<std::size_t>> batches(const Dataset& ds,
                                                     std::size_t batch_size,
                                                     std::uint64_t seed,
                                                     std::uint64_t epoch) {
  return batches(ds.size(), batch_size, seed, epoch);
}

// ---------------------------------------------------------------------------
// Binary cache. Layout, little-endian:
//   "BFID", u32 version (1), u64 N, u64 D, u64 num_classes, i64 label_base,
//   u32 name_count, name_count x {u32 len, bytes},
//   N*D x f32 features (row-major), N x u32 labels.

inline constexpr std::array<char, 4> kDatasetMagic = {'B', 'F', 'I', 'D'};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset_binary(const Dataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw LoadError(path + ": cannot open for writing");
  os.write(kDatasetMagic.data(), kDatasetMagic.size());
  io::put_le<std::uint32_t>(os, kDatasetVersion);
  io::put_le<std::uint64_t>(os, ds.size());
  io::put_le<std::uint64_t>(os, ds.dim());
  io::put_le<std::uint64_t>(os, ds.num_classes);
  io::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(ds.label_base));
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.feature_names.size()));
  for (const auto& name : ds.feature_names) {
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
  }
  for (float v : ds.features.span()) io::put_f32(os, v);
  for (auto l : ds.labels) io::put_le<std::uint32_t>(os, l);
  if (!os) throw LoadError(path + ": write failed");
}

inline Dataset load_dataset_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError(path + ": cannot open file");
  try {
    std::array<char, 4> magic;
    io::get_bytes(is, magic.data(), magic.size());
    if (magic != kDatasetMagic) throw LoadError(path + ": not a BFID file");
    if (io::get_le<std::uint32_t>(is) != kDatasetVersion)
      throw LoadError(path + ": unsupported BFID version");
    Dataset ds;
    const auto n = io::get_le<std::uint64_t>(is);
    const auto d = io::get_le<std::uint64_t>(is);
    ds.num_classes = io::get_le<std::uint64_t>(is);
    ds.label_base = static_cast<std::int64_t>(io::get_le<std::uint64_t>(is));
    const auto names = io::get_le<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < names; ++i) {
      std::string s(io::get_le<std::uint32_t>(is), '\0');
      io::get_bytes(is, s.data(), s.size());
      ds.feature_names.push_back(std::move(s));
    }
    ds.features = Matrix<float>(n, d);
    for (auto& v : ds.features.span()) v = io::get_f32(is);
    ds.labels.resize(n);
    for (auto& l : ds.labels) {
      l = io::get_le<std::uint32_t>(is);
      if (l >= ds.num_classes) throw LoadError(path + ": label out of range");
    }
    return ds;
  } catch (const FormatError& e) {
    throw LoadError(path + ": " + e.what());
  }
}

}  // namespace bfi
