#ifndef U2REG_IO_HPP
#define U2REG_IO_HPP

// File formats:
//   dataset CSV   header x0,...,x{D-1},y_prime[,y_true][,corrupted]; any
//                 leading columns not named y_prime/y_true/corrupted are
//                 features. Floats are written with 17 significant digits.
//   series CSV    header of channel names, one numeric row per time step.
//   model file    line-oriented text, "u2reg-model 1" magic, theta written
//                 with 17 significant digits so it reads back bit-exact.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <unistd.h>
#include <variant>
#include <vector>

#include "matrix.hpp"
#include "models.hpp"
#include "synthdata.hpp"

namespace u2reg {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(std::string_view s, std::string_view what) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw std::invalid_argument("cannot parse " + std::string(what) + " value '" + std::string(s) + "'");
  }
  return v;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Writes through `fill` into a temporary next to `path`, then renames it
/// into place. Nothing is left at `path` if `fill` throws.
inline void write_file_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& fill) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  try {
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
      fill(out);
      out.flush();
      if (!out) throw std::runtime_error("write to '" + tmp.string() + "' failed");
    }
    std::filesystem::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw;
  }
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open '" + path.string() + "'");
  return in;
}

// ---------------------------------------------------------------- datasets

inline void write_dataset_csv(std::ostream& out, const Dataset& d) {
  for (std::size_t j = 0; j < d.dim(); ++j) out << 'x' << j << ',';
  out << "y_prime";
  if (d.ys_true) out << ",y_true";
  if (d.corrupted) out << ",corrupted";
  out << '\n';
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (double v : d.xs.row(i)) out << format_double(v) << ',';
    out << format_double(d.ys_prime[i]);
    if (d.ys_true) out << ',' << format_double((*d.ys_true)[i]);
    if (d.corrupted) out << ',' << static_cast<int>((*d.corrupted)[i]);
    out << '\n';
  }
}

/// Reads a dataset CSV. With `require_labels` false a file holding only
/// feature columns is accepted (ys_prime is then zero-filled).
inline Dataset read_dataset_csv(std::istream& in, bool require_labels = true,
                                std::vector<std::string>* feature_names = nullptr) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("dataset CSV is empty");
  const auto header = split_csv_line(line);
  std::optional<std::size_t> c_yp, c_yt, c_mask;
  std::size_t n_features = 0;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& h = header[c];
    if (h == "y_prime") c_yp = c;
    else if (h == "y_true") c_yt = c;
    else if (h == "corrupted") c_mask = c;
    else if (c_yp || c_yt || c_mask) throw std::invalid_argument("feature column '" + h + "' after label columns");
    else {
      ++n_features;
      if (feature_names) feature_names->push_back(h);
    }
  }
  if (require_labels && !c_yp) throw std::invalid_argument("dataset CSV lacks a y_prime column");
  if (n_features == 0) throw std::invalid_argument("dataset CSV has no feature columns");

  Dataset d;
  d.xs = Matrix(0, n_features);
  if (c_yt) d.ys_true.emplace();
  if (c_mask) d.corrupted.emplace();
  std::vector<double> row(n_features);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < n_features; ++j) row[j] = parse_double(cells[j], "feature");
    d.xs.push_row(row);
    d.ys_prime.push_back(c_yp ? parse_double(cells[*c_yp], "y_prime") : 0.0);
    if (c_yt) d.ys_true->push_back(parse_double(cells[*c_yt], "y_true"));
    if (c_mask) d.corrupted->push_back(parse_double(cells[*c_mask], "corrupted") != 0.0 ? 1 : 0);
  }
  if (d.size() == 0) throw std::invalid_argument("dataset CSV has no rows");
  d.row_ids.resize(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) d.row_ids[i] = i;
  validate_dataset(d);
  return d;
}

inline Dataset load_dataset_csv(const std::filesystem::path& path, bool require_labels = true) {
  auto in = open_input(path);
  return read_dataset_csv(in, require_labels);
}

struct Series {
  std::vector<std::string> channels;
  Matrix values;  // T x C
};

inline Series read_series_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("series CSV is empty");
  Series s;
  s.channels = split_csv_line(line);
  s.values = Matrix(0, s.channels.size());
  std::vector<double> row(s.channels.size());
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != s.channels.size()) {
      throw std::invalid_argument("series line " + std::to_string(line_no) + ": wrong field count");
    }
    for (std::size_t c = 0; c < cells.size(); ++c) row[c] = parse_double(cells[c], "series");
    s.values.push_row(row);
  }
  return s;
}

inline void write_window_features_csv(std::ostream& out, const std::vector<std::string>& channels,
                                      const Matrix& features) {
  static constexpr const char* kSuffix[] = {"mean", "std", "q05", "q25", "q50", "q75", "q95"};
  bool first = true;
  for (const auto& c : channels) {
    for (const char* s : kSuffix) {
      out << (first ? "" : ",") << c << '_' << s;
      first = false;
    }
  }
  out << '\n';
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto r = features.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out << (j ? "," : "") << format_double(r[j]);
    out << '\n';
  }
}

// ------------------------------------------------------------------ models

struct ModelFile {
  Model model;
  std::optional<Standardizer> standardizer;
};

inline constexpr std::string_view kModelMagic = "u2reg-model 1";

inline void write_model(std::ostream& out, const ModelFile& mf) {
  const Model& m = mf.model;
  out << kModelMagic << '\n';
  if (const auto* r = std::get_if<RbfArch>(&m.arch)) {
    out << "arch rbf\n" << "input_dim " << m.input_dim << '\n';
    out << "sigma " << format_double(r->sigma) << '\n';
    out << "bases " << r->bases.rows() << '\n';
    for (std::size_t i = 0; i < r->bases.rows(); ++i) {
      const auto b = r->bases.row(i);
      for (std::size_t j = 0; j < b.size(); ++j) out << (j ? " " : "") << format_double(b[j]);
      out << '\n';
    }
  } else if (const auto* p = std::get_if<MlpArch>(&m.arch)) {
    out << "arch mlp\n" << "input_dim " << m.input_dim << '\n' << "hidden";
    for (auto w : p->hidden) out << ' ' << w;
    out << '\n' << "dropout " << format_double(p->dropout) << '\n';
  } else {
    out << "arch linear\n" << "input_dim " << m.input_dim << '\n';
  }
  if (mf.standardizer) {
    out << "standardizer\n";
    for (std::size_t j = 0; j < mf.standardizer->mean.size(); ++j) {
      out << (j ? " " : "") << format_double(mf.standardizer->mean[j]);
    }
    out << '\n';
    for (std::size_t j = 0; j < mf.standardizer->scale.size(); ++j) {
      out << (j ? " " : "") << format_double(mf.standardizer->scale[j]);
    }
    out << '\n';
  }
  out << "theta " << m.theta.size() << '\n';
  for (double t : m.theta) out << format_double(t) << '\n';
  out << "end\n";
}

inline ModelFile read_model(std::istream& in) {
  auto fail = [](const std::string& why) -> ModelFile {
    throw std::invalid_argument("model file: " + why);
  };
  auto read_values = [&](std::size_t count, std::string_view what) {
    std::vector<double> v;
    v.reserve(count);
    std::string tok;
    for (std::size_t i = 0; i < count; ++i) {
      if (!(in >> tok)) throw std::invalid_argument("model file: truncated " + std::string(what));
      v.push_back(parse_double(tok, what));
    }
    return v;
  };
  std::string line;
  if (!std::getline(in, line) || line != kModelMagic) return fail("missing '" + std::string(kModelMagic) + "' header");

  std::string key, kind;
  std::size_t dim = 0;
  in >> key >> kind;
  if (key != "arch") return fail("expected 'arch'");
  in >> key >> dim;
  if (key != "input_dim" || dim == 0) return fail("expected positive 'input_dim'");

  ModelFile mf;
  if (kind == "linear") {
    mf.model.arch = LinearArch{};
  } else if (kind == "rbf") {
    RbfArch r;
    std::size_t m = 0;
    in >> key;
    if (key != "sigma") return fail("expected 'sigma'");
    r.sigma = read_values(1, "sigma")[0];
    in >> key >> m;
    if (key != "bases") return fail("expected 'bases'");
    r.bases = Matrix(m, dim);
    r.bases.data() = read_values(m * dim, "bases");
    mf.model.arch = std::move(r);
  } else if (kind == "mlp") {
    MlpArch p;
    p.hidden.clear();
    in >> key;
    if (key != "hidden") return fail("expected 'hidden'");
    std::getline(in, line);
    std::istringstream ws(line);
    std::size_t w = 0;
    while (ws >> w) p.hidden.push_back(w);
    in >> key;
    if (key != "dropout") return fail("expected 'dropout'");
    p.dropout = read_values(1, "dropout")[0];
    mf.model.arch = std::move(p);
  } else {
    return fail("unknown architecture '" + kind + "'");
  }
  mf.model.input_dim = dim;
  validate_architecture(mf.model.arch, dim);

  in >> key;
  if (key == "standardizer") {
    Standardizer s;
    s.mean = read_values(dim, "standardizer mean");
    s.scale = read_values(dim, "standardizer scale");
    mf.standardizer = std::move(s);
    in >> key;
  }
  std::size_t count = 0;
  if (key != "theta" || !(in >> count)) return fail("expected 'theta <count>'");
  if (count != parameter_count(mf.model.arch, dim)) {
    return fail("theta has " + std::to_string(count) + " entries, architecture needs " +
                std::to_string(parameter_count(mf.model.arch, dim)));
  }
  mf.model.theta = read_values(count, "theta");
  in >> key;
  if (key != "end") return fail("missing 'end'");
  return mf;
}

inline ModelFile load_model(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_model(in);
}

}  // namespace u2reg

#endif  // U2REG_IO_HPP
