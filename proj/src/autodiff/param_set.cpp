#include "msd/param_set.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <iterator>
#include <ostream>

#include "msd/error.hpp"

namespace msd {

void ParamSet::add(std::string name, Tensor value) {
  if (contains(name)) {
    throw ContractError("ParamSet: duplicate entry '" + name + "'");
  }
  entries_.emplace_back(std::move(name), std::move(value));
}

std::size_t ParamSet::total_dim() const noexcept {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) {
    n += t.size();
  }
  return n;
}

const Tensor& ParamSet::at(std::string_view name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) {
      return t;
    }
  }
  throw ContractError("ParamSet: no entry '" + std::string(name) + "'");
}

bool ParamSet::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.first == name; });
}

void ParamSet::set(std::string_view name, Tensor value) {
  for (auto& [n, t] : entries_) {
    if (n == name) {
      t = std::move(value);
      return;
    }
  }
  throw ContractError("ParamSet: no entry '" + std::string(name) + "'");
}

std::vector<Tensor> ParamSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) {
    out.push_back(e.second);
  }
  return out;
}

ParamSet ParamSet::with_values(std::vector<Tensor> values) const {
  if (values.size() != entries_.size()) {
    throw ContractError("ParamSet: expected " + std::to_string(entries_.size()) + " values, got " +
                        std::to_string(values.size()));
  }
  ParamSet out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != entries_[i].second.shape()) {
      throw ShapeError("ParamSet: entry '" + entries_[i].first + "' expects " +
                       shape_str(entries_[i].second.shape()) + ", got " +
                       shape_str(values[i].shape()));
    }
    out.entries_.emplace_back(entries_[i].first, std::move(values[i]));
  }
  return out;
}

ParamSet ParamSet::snapshot() const {
  ParamSet out;
  for (const auto& [n, t] : entries_) {
    out.entries_.emplace_back(n, t.detach());
  }
  return out;
}

ParamSet ParamSet::track(Graph& graph) const {
  ParamSet out;
  for (const auto& [n, t] : entries_) {
    out.entries_.emplace_back(n, graph.leaf(t));
  }
  return out;
}

bool ParamSet::tracked() const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [](const Entry& e) { return e.second.tracked(); });
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(total_dim());
  for (const auto& [n, t] : entries_) {
    flat.insert(flat.end(), t.values().begin(), t.values().end());
  }
  return flat;
}

ParamSet ParamSet::unflatten(std::span<const double> flat, const ParamSet& layout) {
  if (flat.size() != layout.total_dim()) {
    throw ShapeError("ParamSet::unflatten: expected " + std::to_string(layout.total_dim()) +
                     " values, got " + std::to_string(flat.size()));
  }
  ParamSet out;
  std::size_t offset = 0;
  for (const auto& [n, t] : layout.entries_) {
    std::vector<double> v(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                          flat.begin() + static_cast<std::ptrdiff_t>(offset + t.size()));
    offset += t.size();
    out.entries_.emplace_back(n, Tensor(t.shape(), std::move(v)));
  }
  return out;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (entries_.size() != other.entries_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first ||
        entries_[i].second.shape() != other.entries_[i].second.shape()) {
      return false;
    }
  }
  return true;
}

bool ParamSet::bitwise_equal(const ParamSet& other) const {
  if (!same_layout(other)) {
    return false;
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto a = entries_[i].second.values();
    const auto b = other.entries_[i].second.values();
    if (std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

ParamSet linear_combination(double a, const ParamSet& x, double b, const ParamSet& y) {
  if (!x.same_layout(y)) {
    throw ContractError("linear_combination: ParamSet layouts differ");
  }
  std::vector<Tensor> values;
  values.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto u = x[i].second.values();
    const auto v = y[i].second.values();
    std::vector<double> out(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) {
      out[k] = a * u[k] + b * v[k];
    }
    values.emplace_back(x[i].second.shape(), std::move(out));
  }
  return x.with_values(std::move(values));
}

ParamSet zeros_like(const ParamSet& p) {
  std::vector<Tensor> values;
  for (const auto& [n, t] : p) {
    values.push_back(Tensor::zeros(t.shape()));
  }
  return p.with_values(std::move(values));
}

double max_abs_diff(const ParamSet& a, const ParamSet& b) {
  if (!a.same_layout(b)) {
    throw ContractError("max_abs_diff: ParamSet layouts differ");
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto u = a[i].second.values();
    const auto v = b[i].second.values();
    for (std::size_t k = 0; k < u.size(); ++k) {
      m = std::max(m, std::abs(u[k] - v[k]));
    }
  }
  return m;
}

ParamSet finite_diff_gradient(const std::function<double(const ParamSet&)>& f, const ParamSet& p,
                              double step) {
  if (!(step > 0.0)) {
    throw ContractError("finite_diff_gradient: step must be positive");
  }
  std::vector<double> flat = p.flatten();
  std::vector<double> grad(flat.size());
  const ParamSet layout = p.snapshot();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double x0 = flat[i];
    flat[i] = x0 + step;
    const double up = f(ParamSet::unflatten(flat, layout));
    flat[i] = x0 - step;
    const double down = f(ParamSet::unflatten(flat, layout));
    flat[i] = x0;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw DivergenceError("finite_diff_gradient: non-finite objective at coordinate " +
                                std::to_string(i),
                            i);
    }
    grad[i] = (up - down) / (2.0 * step);
  }
  return ParamSet::unflatten(grad, layout);
}

namespace {

constexpr char kMagic[8] = {'M', 'S', 'D', 'C', 'K', 'P', 'T', '1'};

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CorruptCheckpointError(std::string("truncated while reading ") + what, pos_);
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_params(const ParamSet& params) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint64_t>(out, params.size());
  for (const auto& [name, t] : params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) {
      put_le<std::uint64_t>(out, e);
    }
    for (double v : t.values()) {
      put_le<double>(out, v);
    }
  }
  return out;
}

ParamSet decode_params(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.bytes(sizeof(kMagic), "magic") != std::string(kMagic, sizeof(kMagic))) {
    throw CorruptCheckpointError("bad magic (expected MSDCKPT1)", 0);
  }
  const auto count = r.get<std::uint64_t>("entry count");
  ParamSet out;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto name_len = r.get<std::uint32_t>("name length");
    const std::size_t name_at = r.pos();
    std::string name = r.bytes(name_len, "name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) {
      throw CorruptCheckpointError("implausible rank " + std::to_string(rank), r.pos() - 4);
    }
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& extent : shape) {
      extent = r.get<std::uint64_t>("extent");
      n *= extent;
    }
    if (n > r.remaining() / sizeof(double)) {
      throw CorruptCheckpointError("entry '" + name + "' larger than remaining data", r.pos());
    }
    std::vector<double> values(n);
    for (auto& v : values) {
      v = r.get<double>("values");
    }
    if (out.contains(name)) {
      throw CorruptCheckpointError("duplicate entry '" + name + "'", name_at);
    }
    out.add(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0) {
    throw CorruptCheckpointError("trailing bytes after last entry", r.pos());
  }
  return out;
}

void write_params(std::ostream& out, const ParamSet& params) {
  const auto bytes = encode_params(params);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write_params: stream write failed");
  }
}

ParamSet read_params(std::istream& in) {
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_params(bytes);
}

}  // namespace msd
