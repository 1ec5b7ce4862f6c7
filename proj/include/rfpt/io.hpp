#pragma once

// Persistent formats: binary checkpoints of named tensors and plain CSV files
// (header row always present, one row per sample).
//
// Checkpoint layout, all integers and floats little-endian:
//   "RFPT1" | u32 version | u32 tensor count
//   per tensor: u32 name length | name bytes | u32 rank | u64 dims[rank] |
//               f64 data[prod dims] (row-major)

#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "rfpt/attribution.hpp"
#include "rfpt/benchmark.hpp"
#include "rfpt/error.hpp"
#include "rfpt/fingerprint.hpp"
#include "rfpt/nnet.hpp"
#include "rfpt/numerics.hpp"
#include "rfpt/vae.hpp"

namespace rfpt::io {

namespace fs = std::filesystem;

inline constexpr char kMagic[5] = {'R', 'F', 'P', 'T', '1'};
inline constexpr std::uint32_t kVersion = 1;

struct Tensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<double> data;  // row-major
};

using Checkpoint = std::vector<Tensor>;

inline Tensor tensor(std::string name, const Matrix& m) {
  Tensor t{std::move(name), {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}, {}};
  t.data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.data.push_back(m(r, c));
  return t;
}

inline Tensor tensor(std::string name, const Vector& v) {
  return {std::move(name), {static_cast<std::uint64_t>(v.size())},
          std::vector<double>(v.data(), v.data() + v.size())};
}

inline Tensor scalar(std::string name, double x) { return {std::move(name), {1}, {x}}; }

inline const Tensor& find(const Checkpoint& ck, std::string_view name) {
  for (const auto& t : ck)
    if (t.name == name) return t;
  throw Error(Errc::FormatError, "checkpoint has no tensor '" + std::string(name) + "'");
}

inline bool contains(const Checkpoint& ck, std::string_view name) {
  for (const auto& t : ck)
    if (t.name == name) return true;
  return false;
}

inline Matrix as_matrix(const Tensor& t) {
  require(t.dims.size() == 2, Errc::FormatError, "tensor '" + t.name + "' is not rank 2");
  Matrix m(static_cast<Eigen::Index>(t.dims[0]), static_cast<Eigen::Index>(t.dims[1]));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.data[k++];
  return m;
}

inline Vector as_vector(const Tensor& t) {
  require(t.dims.size() == 1, Errc::FormatError, "tensor '" + t.name + "' is not rank 1");
  return Eigen::Map<const Vector>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}

inline double as_scalar(const Tensor& t) {
  require(t.data.size() == 1, Errc::FormatError, "tensor '" + t.name + "' is not a scalar");
  return t.data[0];
}

namespace detail {

template <class U>
void put(std::ostream& os, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <class U>
U get(std::istream& is) {
  unsigned char bytes[sizeof(U)];
  is.read(reinterpret_cast<char*>(bytes), sizeof(U));
  require(static_cast<bool>(is), Errc::FormatError, "checkpoint is truncated");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

inline void put_double(std::ostream& os, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, sizeof bits);
  put(os, bits);
}

inline double get_double(std::istream& is) {
  const auto bits = get<std::uint64_t>(is);
  double x;
  std::memcpy(&x, &bits, sizeof x);
  return x;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  os.write(kMagic, sizeof kMagic);
  detail::put<std::uint32_t>(os, kVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.size()));
  for (const auto& t : ck) {
    std::uint64_t count = 1;
    for (auto d : t.dims) count *= d;
    require(count == t.data.size(), Errc::DimensionMismatch,
            "tensor '" + t.name + "' data does not match its dims");
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) detail::put<std::uint64_t>(os, d);
    for (double x : t.data) detail::put_double(os, x);
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  char magic[sizeof kMagic];
  is.read(magic, sizeof magic);
  require(static_cast<bool>(is) && std::memcmp(magic, kMagic, sizeof kMagic) == 0,
          Errc::FormatError, "not an RFPT1 checkpoint");
  const auto version = detail::get<std::uint32_t>(is);
  require(version == kVersion, Errc::FormatError,
          "unsupported checkpoint version " + std::to_string(version));
  const auto n = detail::get<std::uint32_t>(is);
  Checkpoint ck;
  for (std::uint32_t i = 0; i < n; ++i) {
    Tensor t;
    t.name.resize(detail::get<std::uint32_t>(is));
    is.read(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    const auto rank = detail::get<std::uint32_t>(is);
    std::uint64_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.dims.push_back(detail::get<std::uint64_t>(is));
      count *= t.dims.back();
    }
    require(count < (1ULL << 32), Errc::FormatError, "tensor '" + t.name + "' is implausibly large");
    t.data.resize(count);
    for (auto& x : t.data) x = detail::get_double(is);
    ck.push_back(std::move(t));
  }
  return ck;
}

inline void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), Errc::FileMissing, "cannot write " + path.string());
  write_checkpoint(os, ck);
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), Errc::FileMissing, "cannot open " + path.string());
  return read_checkpoint(is);
}

// ---------------------------------------------------------------------------
// Model <-> tensors

inline void append_mlp(Checkpoint& ck, const std::string& prefix, const nnet::Mlp& net) {
  ck.push_back(scalar(prefix + ".layers", static_cast<double>(net.layers().size())));
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const auto& l = net.layers()[i];
    const std::string p = prefix + "." + std::to_string(i);
    ck.push_back(tensor(p + ".weight", l.weight));
    ck.push_back(tensor(p + ".bias", l.bias));
    ck.push_back(scalar(p + ".activation", static_cast<double>(static_cast<int>(l.activation))));
  }
}

inline nnet::Mlp read_mlp(const Checkpoint& ck, const std::string& prefix) {
  const auto n = static_cast<int>(as_scalar(find(ck, prefix + ".layers")));
  std::vector<nnet::Layer> layers;
  for (int i = 0; i < n; ++i) {
    const std::string p = prefix + "." + std::to_string(i);
    nnet::Layer l;
    l.weight = as_matrix(find(ck, p + ".weight"));
    l.bias = as_vector(find(ck, p + ".bias"));
    const auto code = static_cast<int>(as_scalar(find(ck, p + ".activation")));
    require(code >= 0 && code <= 2, Errc::FormatError, "unknown activation code");
    l.activation = static_cast<nnet::Activation>(code);
    layers.push_back(std::move(l));
  }
  return nnet::Mlp(std::move(layers));
}

inline constexpr double kKindVae = 1.0;
inline constexpr double kKindClassifier = 2.0;

inline Checkpoint to_checkpoint(const VaeModel& m) {
  Checkpoint ck{scalar("kind", kKindVae)};
  append_mlp(ck, "encoder_mean", m.encoder_mean);
  append_mlp(ck, "encoder_logvar", m.encoder_logvar);
  append_mlp(ck, "decoder_mean", m.decoder_mean);
  ck.push_back(tensor("decoder_std.centers", m.decoder_std.centers));
  ck.push_back(tensor("decoder_std.bandwidths", m.decoder_std.bandwidths));
  ck.push_back(tensor("decoder_std.weights", m.decoder_std.weights));
  ck.push_back(scalar("decoder_std.floor", m.decoder_std.floor));
  return ck;
}

inline VaeModel vae_from_checkpoint(const Checkpoint& ck) {
  require(as_scalar(find(ck, "kind")) == kKindVae, Errc::FormatError, "checkpoint is not a VAE");
  RbfStdNet s;
  s.centers = as_matrix(find(ck, "decoder_std.centers"));
  s.bandwidths = as_vector(find(ck, "decoder_std.bandwidths"));
  s.weights = as_matrix(find(ck, "decoder_std.weights"));
  s.floor = as_scalar(find(ck, "decoder_std.floor"));
  return VaeModel(read_mlp(ck, "encoder_mean"), read_mlp(ck, "encoder_logvar"),
                  read_mlp(ck, "decoder_mean"), std::move(s));
}

inline Checkpoint to_checkpoint(const attr::AttributionModel& m) {
  Checkpoint ck{scalar("kind", kKindClassifier)};
  append_mlp(ck, "net", m.net);
  ck.push_back(tensor("feature_mean", m.feature_mean));
  ck.push_back(tensor("feature_scale", m.feature_scale));
  ck.push_back(scalar("feature_mode", static_cast<double>(static_cast<int>(m.mode))));
  return ck;
}

inline attr::AttributionModel classifier_from_checkpoint(const Checkpoint& ck) {
  require(as_scalar(find(ck, "kind")) == kKindClassifier, Errc::FormatError,
          "checkpoint is not a classifier");
  attr::AttributionModel m;
  m.net = read_mlp(ck, "net");
  m.feature_mean = as_vector(find(ck, "feature_mean"));
  m.feature_scale = as_vector(find(ck, "feature_scale"));
  const auto mode = static_cast<int>(as_scalar(find(ck, "feature_mode")));
  require(mode >= 0 && mode <= 2, Errc::FormatError, "unknown feature mode code");
  m.mode = static_cast<attr::FeatureMode>(mode);
  return m;
}

// ---------------------------------------------------------------------------
// CSV

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double x = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(), Errc::FormatError,
          "not a number: '" + std::string(s) + "'");
  return x;
}

inline long parse_int(std::string_view s) {
  long x = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(), Errc::FormatError,
          "not an integer: '" + std::string(s) + "'");
  return x;
}

inline std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Free text goes into a single cell.
inline std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

class CsvWriter {
 public:
  explicit CsvWriter(const fs::path& path) : os_(path), path_(path) {
    require(static_cast<bool>(os_), Errc::FileMissing, "cannot write " + path.string());
  }

  CsvWriter& cell(std::string_view s) {
    if (!first_) os_ << ',';
    os_ << s;
    first_ = false;
    return *this;
  }
  CsvWriter& cell(double x) { return cell(format_double(x)); }
  CsvWriter& cell(long x) { return cell(std::to_string(x)); }
  CsvWriter& cell(int x) { return cell(std::to_string(x)); }
  CsvWriter& cells(const Vector& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) cell(v(i));
    return *this;
  }
  void end_row() {
    os_ << '\n';
    first_ = true;
  }

 private:
  std::ofstream os_;
  fs::path path_;
  bool first_ = true;
};

/// Header and data rows of a CSV file.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw Error(Errc::FormatError, "missing column '" + std::string(name) + "'");
  }
};

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), Errc::FileMissing, "cannot open " + path.string());
  CsvTable t;
  std::string line;
  require(static_cast<bool>(std::getline(is, line)), Errc::FormatError,
          path.string() + " has no header row");
  t.header = split_row(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    t.rows.push_back(split_row(line));
    require(t.rows.back().size() == t.header.size(), Errc::FormatError,
            path.string() + ": row " + std::to_string(t.rows.size()) + " has " +
                std::to_string(t.rows.back().size()) + " cells, header has " +
                std::to_string(t.header.size()));
  }
  return t;
}

inline void write_matrix_csv(const fs::path& path, const Matrix& m, std::string_view prefix = "x") {
  CsvWriter w(path);
  for (Eigen::Index j = 0; j < m.cols(); ++j) w.cell(std::string(prefix) + std::to_string(j + 1));
  w.end_row();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    w.cells(m.row(i).transpose());
    w.end_row();
  }
}

inline Matrix read_matrix_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  Matrix m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t j = 0; j < t.header.size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = parse_double(t.rows[i][j]);
  return m;
}

/// sample_id,label,split,x1..xD
inline void write_dataset_csv(const fs::path& path, const bench::LabeledDataset& ds) {
  CsvWriter w(path);
  w.cell("sample_id").cell("label").cell("split");
  for (Eigen::Index j = 0; j < ds.samples.cols(); ++j) w.cell("x" + std::to_string(j + 1));
  w.end_row();
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    w.cell(static_cast<long>(i)).cell(ds.labels[k]).cell(bench::to_string(ds.splits[k]));
    w.cells(ds.samples.row(i).transpose());
    w.end_row();
  }
}

inline bench::LabeledDataset read_dataset_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  require(t.header.size() >= 4 && t.header[0] == "sample_id" && t.header[1] == "label" &&
              t.header[2] == "split",
          Errc::FormatError, path.string() + " is not a labeled dataset");
  const auto dim = static_cast<Eigen::Index>(t.header.size() - 3);
  bench::LabeledDataset ds;
  ds.samples.resize(static_cast<Eigen::Index>(t.rows.size()), dim);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    require(parse_int(r[0]) == static_cast<long>(i), Errc::FormatError,
            "sample ids must be 0..n-1 in order");
    ds.labels.push_back(static_cast<int>(parse_int(r[1])));
    ds.splits.push_back(bench::parse_split(r[2]));
    for (Eigen::Index j = 0; j < dim; ++j)
      ds.samples(static_cast<Eigen::Index>(i), j) = parse_double(r[static_cast<std::size_t>(3 + j)]);
  }
  return ds;
}

/// One artifact row as stored on disk.
struct FingerprintRow {
  int model_id = 0;
  int sample_id = 0;
  bool converged = false;
  Vector ambient;
  Vector latent;
};

/// model_id,sample_id,converged,a_1..a_D,az_1..az_d
inline void write_fingerprints_csv(const fs::path& path, const std::vector<FingerprintRow>& rows) {
  require(!rows.empty(), Errc::InsufficientData, "no fingerprints to write");
  CsvWriter w(path);
  w.cell("model_id").cell("sample_id").cell("converged");
  for (Eigen::Index j = 0; j < rows.front().ambient.size(); ++j) w.cell("a_" + std::to_string(j + 1));
  for (Eigen::Index j = 0; j < rows.front().latent.size(); ++j) w.cell("az_" + std::to_string(j + 1));
  w.end_row();
  for (const auto& r : rows) {
    w.cell(r.model_id).cell(r.sample_id).cell(r.converged ? 1 : 0);
    w.cells(r.ambient).cells(r.latent);
    w.end_row();
  }
}

inline std::vector<FingerprintRow> read_fingerprints_csv(const fs::path& path) {
  const CsvTable t = read_csv(path);
  require(t.header.size() >= 3 && t.header[0] == "model_id", Errc::FormatError,
          path.string() + " is not a fingerprint file");
  std::size_t dim_a = 0, dim_z = 0;
  for (const auto& h : t.header) {
    if (h.rfind("a_", 0) == 0) ++dim_a;
    if (h.rfind("az_", 0) == 0) ++dim_z;
  }
  std::vector<FingerprintRow> out;
  for (const auto& r : t.rows) {
    FingerprintRow f;
    f.model_id = static_cast<int>(parse_int(r[0]));
    f.sample_id = static_cast<int>(parse_int(r[1]));
    f.converged = parse_int(r[2]) != 0;
    f.ambient.resize(static_cast<Eigen::Index>(dim_a));
    f.latent.resize(static_cast<Eigen::Index>(dim_z));
    for (std::size_t j = 0; j < dim_a; ++j) f.ambient(static_cast<Eigen::Index>(j)) = parse_double(r[3 + j]);
    for (std::size_t j = 0; j < dim_z; ++j)
      f.latent(static_cast<Eigen::Index>(j)) = parse_double(r[3 + dim_a + j]);
    out.push_back(std::move(f));
  }
  return out;
}

struct DiagnosticsRow {
  int model_id = 0;
  int sample_id = 0;
  RcmDiagnostics diagnostics;
  std::string error;  // non-empty when the sample failed
};

inline void write_diagnostics_csv(const fs::path& path, const std::vector<DiagnosticsRow>& rows) {
  CsvWriter w(path);
  for (const char* h : {"model_id", "sample_id", "iterations", "grad_norm", "objective",
                        "converged", "geodesic_failures", "near_duplicate", "error"})
    w.cell(h);
  w.end_row();
  for (const auto& r : rows) {
    const auto& d = r.diagnostics;
    w.cell(r.model_id).cell(r.sample_id).cell(d.iterations).cell(d.grad_norm).cell(d.objective);
    w.cell(d.converged ? 1 : 0).cell(d.geodesic_failures).cell(d.near_duplicate ? 1 : 0);
    w.cell(sanitize(r.error));
    w.end_row();
  }
}

/// metric,class,value. Class is empty for global metrics.
inline void write_report_csv(const fs::path& path, const attr::EvalReport& r) {
  CsvWriter w(path);
  w.cell("metric").cell("class").cell("value");
  w.end_row();
  w.cell("accuracy").cell("").cell(r.accuracy);
  w.end_row();
  w.cell("fdr").cell("").cell(r.fdr);
  w.end_row();
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    w.cell("class_accuracy").cell(static_cast<long>(c)).cell(r.per_class[c]);
    w.end_row();
  }
}

/// Rows are true classes, columns predicted classes.
inline void write_confusion_csv(const fs::path& path, const attr::EvalReport& r) {
  CsvWriter w(path);
  w.cell("true");
  for (std::size_t c = 0; c < r.confusion.size(); ++c) w.cell("pred_" + std::to_string(c));
  w.end_row();
  for (std::size_t t = 0; t < r.confusion.size(); ++t) {
    w.cell(static_cast<long>(t));
    for (long n : r.confusion[t]) w.cell(n);
    w.end_row();
  }
}

}  // namespace rfpt::io
