#include "icl_lab/serialization.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "icl_lab/errors.hpp"

namespace icl {
namespace {

constexpr std::string_view kHmmMagic = "icl_lab_hmm";
constexpr std::string_view kMomentMagic = "icl_lab_moment";
constexpr int kFormatVersion = 1;

void write_matrix(std::ostream& out, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c > 0) out << ' ';
      out << format_real(m(r, c));
    }
    out << '\n';
  }
}

template <class T>
void write_list(std::ostream& out, std::string_view key, const std::vector<T>& values) {
  out << key;
  for (const T& v : values) out << ' ' << v;
  out << '\n';
}

// Line-oriented reader: skips blank lines and '#' comments, tracks the line
// number for error messages.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::vector<std::string> fields() {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      std::istringstream ss(line);
      std::vector<std::string> out;
      for (std::string tok; ss >> tok;) out.push_back(tok);
      if (!out.empty()) return out;
    }
    error("unexpected end of input");
  }

  std::vector<std::string> expect(std::string_view key, std::size_t min_values,
                                  std::size_t max_values) {
    auto f = fields();
    if (f[0] != key) error("expected '" + std::string(key) + "', found '" + f[0] + "'");
    const std::size_t n = f.size() - 1;
    if (n < min_values || n > max_values) error("wrong number of values for '" + f[0] + "'");
    f.erase(f.begin());
    return f;
  }

  double real(const std::string& tok) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) error("bad real '" + tok + "'");
    return v;
  }

  long long integer(const std::string& tok) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) error("bad integer '" + tok + "'");
    return v;
  }

  Matrix matrix(Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto f = fields();
      if (static_cast<Eigen::Index>(f.size()) != cols) {
        error("matrix row " + std::to_string(r) + " has " + std::to_string(f.size()) +
              " entries, expected " + std::to_string(cols));
      }
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = real(f[static_cast<std::size_t>(c)]);
    }
    return m;
  }

  [[noreturn]] void error(const std::string& what) const {
    fail(ErrorKind::Io, "line " + std::to_string(line_no_) + ": " + what);
  }

 private:
  std::istream& in_;
  std::size_t line_no_ = 0;
};

void check_header(Reader& r, std::string_view magic) {
  const auto f = r.fields();
  if (f.size() != 2 || f[0] != magic) r.error("missing '" + std::string(magic) + "' header");
  if (r.integer(f[1]) != kFormatVersion) r.error("unsupported format version " + f[1]);
}

}  // namespace

std::string format_real(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

void write_hmm(std::ostream& out, const Hmm& hmm) {
  out << kHmmMagic << ' ' << kFormatVersion << '\n';
  out << "num_states " << hmm.num_states() << '\n';
  out << "num_obs " << hmm.num_obs() << '\n';
  out << "delimiter " << hmm.delimiter() << '\n';
  write_list(out, "label_set", hmm.label_set());
  write_list(out, "task_starts", hmm.task_starts());
  out << "pretrain_init";
  for (Eigen::Index s = 0; s < hmm.pretrain_init().size(); ++s) {
    out << ' ' << format_real(hmm.pretrain_init()(s));
  }
  out << '\n';
  out << "transition " << hmm.num_states() << ' ' << hmm.num_states() << '\n';
  write_matrix(out, hmm.transition());
  out << "emission " << hmm.num_states() << ' ' << hmm.num_obs() << '\n';
  write_matrix(out, hmm.emission());
  out << "end\n";
}

Hmm read_hmm(std::istream& in) {
  Reader r(in);
  check_header(r, kHmmMagic);
  const auto d = r.integer(r.expect("num_states", 1, 1)[0]);
  const auto m = r.integer(r.expect("num_obs", 1, 1)[0]);
  if (d <= 0 || m <= 0) r.error("num_states and num_obs must be positive");
  Hmm::Parts parts;
  parts.delimiter = static_cast<Token>(r.integer(r.expect("delimiter", 1, 1)[0]));
  for (const auto& tok : r.expect("label_set", 1, static_cast<std::size_t>(m))) {
    parts.label_set.push_back(static_cast<Token>(r.integer(tok)));
  }
  for (const auto& tok : r.expect("task_starts", 1, static_cast<std::size_t>(d))) {
    parts.task_starts.push_back(static_cast<int>(r.integer(tok)));
  }
  const auto init = r.expect("pretrain_init", static_cast<std::size_t>(d), static_cast<std::size_t>(d));
  parts.pretrain_init.resize(d);
  for (Eigen::Index s = 0; s < d; ++s) parts.pretrain_init(s) = r.real(init[static_cast<std::size_t>(s)]);
  const auto tdim = r.expect("transition", 2, 2);
  if (r.integer(tdim[0]) != d || r.integer(tdim[1]) != d) r.error("transition must be d x d");
  parts.transition = r.matrix(d, d);
  const auto edim = r.expect("emission", 2, 2);
  if (r.integer(edim[0]) != d || r.integer(edim[1]) != m) r.error("emission must be d x m");
  parts.emission = r.matrix(d, m);
  r.expect("end", 0, 0);
  return Hmm::create(std::move(parts));
}

void save_hmm(const std::filesystem::path& path, const Hmm& hmm) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  write_hmm(out, hmm);
}

Hmm load_hmm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  return read_hmm(in);
}

void write_moment(std::ostream& out, const MomentMatrix& moment) {
  const bool exact = moment.estimator.kind == MomentEstimator::Kind::Exact;
  out << kMomentMagic << ' ' << kFormatVersion << '\n';
  out << "dim " << moment.sigma.rows() << '\n';
  out << "init " << moment.init_label << '\n';
  out << "length " << moment.length << '\n';
  out << "estimator " << (exact ? "exact" : "mc") << '\n';
  out << "samples " << moment.estimator.samples << '\n';
  out << "seed " << moment.estimator.seed << '\n';
  out << "ridge " << format_real(moment.ridge) << '\n';
  out << "sigma " << moment.sigma.rows() << ' ' << moment.sigma.cols() << '\n';
  write_matrix(out, moment.sigma);
  out << "end\n";
}

MomentMatrix read_moment(std::istream& in) {
  Reader r(in);
  check_header(r, kMomentMagic);
  MomentMatrix out;
  const auto dim = r.integer(r.expect("dim", 1, 1)[0]);
  if (dim <= 0) r.error("dim must be positive");
  out.init_label = r.expect("init", 1, 1)[0];
  out.length = static_cast<std::size_t>(r.integer(r.expect("length", 1, 1)[0]));
  const auto est = r.expect("estimator", 1, 1)[0];
  if (est != "exact" && est != "mc") r.error("estimator must be 'exact' or 'mc'");
  out.estimator.kind = est == "exact" ? MomentEstimator::Kind::Exact
                                      : MomentEstimator::Kind::MonteCarlo;
  out.estimator.samples = static_cast<std::size_t>(r.integer(r.expect("samples", 1, 1)[0]));
  const auto seed_tok = r.expect("seed", 1, 1)[0];
  std::uint64_t seed = 0;
  const auto [ptr, ec] = std::from_chars(seed_tok.data(), seed_tok.data() + seed_tok.size(), seed);
  if (ec != std::errc() || ptr != seed_tok.data() + seed_tok.size()) r.error("bad seed");
  out.estimator.seed = seed;
  out.ridge = r.real(r.expect("ridge", 1, 1)[0]);
  const auto sdim = r.expect("sigma", 2, 2);
  if (r.integer(sdim[0]) != dim || r.integer(sdim[1]) != dim) r.error("sigma must be dim x dim");
  out.sigma = r.matrix(dim, dim);
  r.expect("end", 0, 0);
  return out;
}

}  // namespace icl
