#include "facegen/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace facegen {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ')';
  return os.str();
}

const Shape& Tensor::shape() const { return tape_->shape_of(id_); }
const std::vector<double>& Tensor::values() const { return tape_->values_of(id_); }
bool Tensor::requires_grad() const { return tape_ != nullptr && tape_->requires_grad_of(id_); }
std::size_t Tensor::size() const { return values().size(); }

double Tensor::scalar() const {
  const auto& v = values();
  if (v.size() != 1) {
    throw std::invalid_argument("Tensor::scalar: tensor has shape " + shape_to_string(shape()) +
                                ", expected a single element");
  }
  return v[0];
}

void Tape::check_same_shape(const char* op, const Tensor& a, const Tensor& b) const {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                                " vs " + shape_to_string(b.shape()));
  }
}

void Tape::check_finite(const char* op, const std::vector<double>& values) const {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(op) + ": non-finite value produced");
    }
  }
}

Tensor Tape::emplace(Shape shape, std::vector<double> values, bool requires_grad, const char* op,
                     std::function<void(Tape&, const std::vector<double>&)> pull) {
  if (values.size() != numel(shape)) {
    throw std::invalid_argument(std::string(op) + ": value count " + std::to_string(values.size()) +
                                " does not match shape " + shape_to_string(shape));
  }
  check_finite(op, values);
  Node n;
  n.shape = std::move(shape);
  n.values = std::move(values);
  n.requires_grad = requires_grad;
  n.is_leaf = pull == nullptr;
  n.op = op;
  n.pull = std::move(pull);
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  return emplace(std::move(shape), std::move(values), requires_grad, "leaf", nullptr);
}

Tensor Tape::zeros(Shape shape, bool requires_grad) {
  std::vector<double> v(numel(shape), 0.0);
  return leaf(std::move(shape), std::move(v), requires_grad);
}

std::vector<double>& Tape::adjoint(std::size_t id, std::size_t n) {
  auto& a = adjoints_[id];
  if (a.empty()) a.assign(n, 0.0);
  return a;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_to_string(sa) + " vs " +
                                shape_to_string(sb));
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  std::vector<double> out(m * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data() + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  const bool rg = a.requires_grad() || b.requires_grad();
  const std::size_t ia = a.id(), ib = b.id();
  return emplace({m, n}, std::move(out), rg, "matmul",
                 [ia, ib, m, k, n](Tape& t, const std::vector<double>& up) {
                   const auto& av = t.nodes_[ia].values;
                   const auto& bv = t.nodes_[ib].values;
                   if (t.nodes_[ia].requires_grad) {
                     auto& ga = t.adjoint(ia, m * k);
                     // dA = up @ B^T
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t p = 0; p < k; ++p) {
                         double s = 0.0;
                         const double* urow = up.data() + i * n;
                         const double* brow = bv.data() + p * n;
                         for (std::size_t j = 0; j < n; ++j) s += urow[j] * brow[j];
                         ga[i * k + p] += s;
                       }
                   }
                   if (t.nodes_[ib].requires_grad) {
                     auto& gb = t.adjoint(ib, k * n);
                     // dB = A^T @ up
                     for (std::size_t p = 0; p < k; ++p)
                       for (std::size_t i = 0; i < m; ++i) {
                         const double aip = av[i * k + p];
                         if (aip == 0.0) continue;
                         const double* urow = up.data() + i * n;
                         double* grow = gb.data() + p * n;
                         for (std::size_t j = 0; j < n; ++j) grow[j] += aip * urow[j];
                       }
                   }
                 });
}

namespace {

template <class Fwd>
std::vector<double> elementwise(const std::vector<double>& a, const std::vector<double>& b, Fwd f) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

}  // namespace

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  auto out = elementwise(a.values(), b.values(), [](double x, double y) { return x + y; });
  const bool rg = a.requires_grad() || b.requires_grad();
  const std::size_t ia = a.id(), ib = b.id(), n = out.size();
  return emplace(a.shape(), std::move(out), rg, "add",
                 [ia, ib, n](Tape& t, const std::vector<double>& up) {
                   if (t.nodes_[ia].requires_grad) {
                     auto& g = t.adjoint(ia, n);
                     for (std::size_t i = 0; i < n; ++i) g[i] += up[i];
                   }
                   if (t.nodes_[ib].requires_grad) {
                     auto& g = t.adjoint(ib, n);
                     for (std::size_t i = 0; i < n; ++i) g[i] += up[i];
                   }
                 });
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  auto out = elementwise(a.values(), b.values(), [](double x, double y) { return x - y; });
  const bool rg = a.requires_grad() || b.requires_grad();
  const std::size_t ia = a.id(), ib = b.id(), n = out.size();
  return emplace(a.shape(), std::move(out), rg, "sub",
                 [ia, ib, n](Tape& t, const std::vector<double>& up) {
                   if (t.nodes_[ia].requires_grad) {
                     auto& g = t.adjoint(ia, n);
                     for (std::size_t i = 0; i < n; ++i) g[i] += up[i];
                   }
                   if (t.nodes_[ib].requires_grad) {
                     auto& g = t.adjoint(ib, n);
                     for (std::size_t i = 0; i < n; ++i) g[i] -= up[i];
                   }
                 });
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  auto out = elementwise(a.values(), b.values(), [](double x, double y) { return x * y; });
  const bool rg = a.requires_grad() || b.requires_grad();
  const std::size_t ia = a.id(), ib = b.id(), n = out.size();
  return emplace(a.shape(), std::move(out), rg, "mul",
                 [ia, ib, n](Tape& t, const std::vector<double>& up) {
                   const auto& av = t.nodes_[ia].values;
                   const auto& bv = t.nodes_[ib].values;
                   if (t.nodes_[ia].requires_grad) {
                     auto& g = t.adjoint(ia, n);
                     for (std::size_t i = 0; i < n; ++i) g[i] += up[i] * bv[i];
                   }
                   if (t.nodes_[ib].requires_grad) {
                     auto& g = t.adjoint(ib, n);
                     for (std::size_t i = 0; i < n; ++i) g[i] += up[i] * av[i];
                   }
                 });
}

Tensor Tape::div(const Tensor& a, const Tensor& b) {
  check_same_shape("div", a, b);
  for (double y : b.values()) {
    if (y == 0.0) throw std::invalid_argument("div: division by zero");
  }
  auto out = elementwise(a.values(), b.values(), [](double x, double y) { return x / y; });
  const bool rg = a.requires_grad() || b.requires_grad();
  const std::size_t ia = a.id(), ib = b.id(), n = out.size();
  return emplace(a.shape(), std::move(out), rg, "div",
                 [ia, ib, n](Tape& t, const std::vector<double>& up) {
                   const auto& av = t.nodes_[ia].values;
                   const auto& bv = t.nodes_[ib].values;
                   if (t.nodes_[ia].requires_grad) {
                     auto& g = t.adjoint(ia, n);
                     for (std::size_t i = 0; i < n; ++i) g[i] += up[i] / bv[i];
                   }
                   if (t.nodes_[ib].requires_grad) {
                     auto& g = t.adjoint(ib, n);
                     for (std::size_t i = 0; i < n; ++i) g[i] -= up[i] * av[i] / (bv[i] * bv[i]);
                   }
                 });
}

Tensor Tape::scale(const Tensor& a, double s) {
  std::vector<double> out(a.values());
  for (auto& v : out) v *= s;
  const std::size_t ia = a.id(), n = out.size();
  return emplace(a.shape(), std::move(out), a.requires_grad(), "scale",
                 [ia, n, s](Tape& t, const std::vector<double>& up) {
                   if (!t.nodes_[ia].requires_grad) return;
                   auto& g = t.adjoint(ia, n);
                   for (std::size_t i = 0; i < n; ++i) g[i] += s * up[i];
                 });
}

Tensor Tape::reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_to_string(a.shape()) + " as " +
                                shape_to_string(shape));
  }
  std::vector<double> out(a.values());
  const std::size_t ia = a.id(), n = out.size();
  return emplace(std::move(shape), std::move(out), a.requires_grad(), "reshape",
                 [ia, n](Tape& t, const std::vector<double>& up) {
                   if (!t.nodes_[ia].requires_grad) return;
                   auto& g = t.adjoint(ia, n);
                   for (std::size_t i = 0; i < n; ++i) g[i] += up[i];
                 });
}

Tensor Tape::concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  std::size_t cols = 0, rows = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != 2) {
      throw std::invalid_argument("concat_rows: expected rank-2 input, got " + shape_to_string(s));
    }
    if (cols == 0) cols = s[1];
    if (s[1] != cols) {
      throw std::invalid_argument("concat_rows: column mismatch " + shape_to_string(parts[0].shape()) +
                                  " vs " + shape_to_string(s));
    }
    rows += s[0];
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  bool rg = false;
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (id, row count)
  for (const auto& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
    rg = rg || p.requires_grad();
    spans.emplace_back(p.id(), p.shape()[0]);
  }
  return emplace({rows, cols}, std::move(out), rg, "concat_rows",
                 [spans, cols](Tape& t, const std::vector<double>& up) {
                   std::size_t row = 0;
                   for (auto [id, r] : spans) {
                     if (t.nodes_[id].requires_grad) {
                       auto& g = t.adjoint(id, r * cols);
                       for (std::size_t i = 0; i < r * cols; ++i) g[i] += up[row * cols + i];
                     }
                     row += r;
                   }
                 });
}

Tensor Tape::reduce_sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  const std::size_t ia = a.id(), n = a.size();
  return emplace({}, {s}, a.requires_grad(), "reduce_sum",
                 [ia, n](Tape& t, const std::vector<double>& up) {
                   if (!t.nodes_[ia].requires_grad) return;
                   auto& g = t.adjoint(ia, n);
                   for (std::size_t i = 0; i < n; ++i) g[i] += up[0];
                 });
}

Tensor Tape::reduce_mean(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("reduce_mean: empty tensor");
  double s = 0.0;
  for (double v : a.values()) s += v;
  const std::size_t ia = a.id(), n = a.size();
  return emplace({}, {s / static_cast<double>(n)}, a.requires_grad(), "reduce_mean",
                 [ia, n](Tape& t, const std::vector<double>& up) {
                   if (!t.nodes_[ia].requires_grad) return;
                   auto& g = t.adjoint(ia, n);
                   const double w = up[0] / static_cast<double>(n);
                   for (std::size_t i = 0; i < n; ++i) g[i] += w;
                 });
}

Tensor Tape::l2_norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  const double norm = std::sqrt(s);
  const std::size_t ia = a.id(), n = a.size();
  return emplace({}, {norm}, a.requires_grad(), "l2_norm",
                 [ia, n, norm](Tape& t, const std::vector<double>& up) {
                   if (!t.nodes_[ia].requires_grad) return;
                   if (norm == 0.0) {
                     throw std::runtime_error("l2_norm: gradient undefined at the zero vector");
                   }
                   const auto& av = t.nodes_[ia].values;
                   auto& g = t.adjoint(ia, n);
                   for (std::size_t i = 0; i < n; ++i) g[i] += up[0] * av[i] / norm;
                 });
}

Tensor Tape::cosine(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("cosine: size mismatch " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
  const auto& av = a.values();
  const auto& bv = b.values();
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    dot += av[i] * bv[i];
    na2 += av[i] * av[i];
    nb2 += bv[i] * bv[i];
  }
  if (na2 == 0.0 || nb2 == 0.0) {
    throw std::invalid_argument("cosine: undefined for a zero vector");
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  const double c = dot / (na * nb);
  const bool rg = a.requires_grad() || b.requires_grad();
  const std::size_t ia = a.id(), ib = b.id(), n = av.size();
  return emplace({}, {c}, rg, "cosine",
                 [ia, ib, n, na, nb, c](Tape& t, const std::vector<double>& up) {
                   const auto& av = t.nodes_[ia].values;
                   const auto& bv = t.nodes_[ib].values;
                   if (t.nodes_[ia].requires_grad) {
                     auto& g = t.adjoint(ia, n);
                     for (std::size_t i = 0; i < n; ++i)
                       g[i] += up[0] * (bv[i] / (na * nb) - c * av[i] / (na * na));
                   }
                   if (t.nodes_[ib].requires_grad) {
                     auto& g = t.adjoint(ib, n);
                     for (std::size_t i = 0; i < n; ++i)
                       g[i] += up[0] * (av[i] / (na * nb) - c * bv[i] / (nb * nb));
                   }
                 });
}

Tensor Tape::softplus(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto& av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = av[i];
    out[i] = x > 30.0 ? x : std::log1p(std::exp(x));
  }
  const std::size_t ia = a.id(), n = out.size();
  return emplace(a.shape(), std::move(out), a.requires_grad(), "softplus",
                 [ia, n](Tape& t, const std::vector<double>& up) {
                   if (!t.nodes_[ia].requires_grad) return;
                   const auto& av = t.nodes_[ia].values;
                   auto& g = t.adjoint(ia, n);
                   for (std::size_t i = 0; i < n; ++i) {
                     const double s = 1.0 / (1.0 + std::exp(-av[i]));
                     g[i] += up[i] * s;
                   }
                 });
}

Tensor Tape::tanh(const Tensor& a) {
  std::vector<double> out(a.values());
  for (auto& v : out) v = std::tanh(v);
  const std::size_t ia = a.id(), n = out.size();
  return emplace(a.shape(), std::move(out), a.requires_grad(), "tanh",
                 [ia, n](Tape& t, const std::vector<double>& up) {
                   if (!t.nodes_[ia].requires_grad) return;
                   const auto& av = t.nodes_[ia].values;
                   auto& g = t.adjoint(ia, n);
                   for (std::size_t i = 0; i < n; ++i) {
                     const double th = std::tanh(av[i]);
                     g[i] += up[i] * (1.0 - th * th);
                   }
                 });
}

Tensor Tape::abs(const Tensor& a) {
  std::vector<double> out(a.values());
  for (auto& v : out) v = std::fabs(v);
  const std::size_t ia = a.id(), n = out.size();
  return emplace(a.shape(), std::move(out), a.requires_grad(), "abs",
                 [ia, n](Tape& t, const std::vector<double>& up) {
                   if (!t.nodes_[ia].requires_grad) return;
                   const auto& av = t.nodes_[ia].values;
                   auto& g = t.adjoint(ia, n);
                   for (std::size_t i = 0; i < n; ++i) {
                     const double s = av[i] > 0.0 ? 1.0 : (av[i] < 0.0 ? -1.0 : 0.0);
                     g[i] += up[i] * s;
                   }
                 });
}

Tensor Tape::upsample_nn(const Tensor& a, std::size_t factor) {
  const Shape& s = a.shape();
  if (s.size() != 3) {
    throw std::invalid_argument("upsample_nn: expected rank-3 (h, w, ch) input, got " +
                                shape_to_string(s));
  }
  if (factor == 0) throw std::invalid_argument("upsample_nn: factor must be positive");
  const std::size_t h = s[0], w = s[1], ch = s[2];
  const std::size_t oh = h * factor, ow = w * factor;
  std::vector<double> out(oh * ow * ch);
  const auto& av = a.values();
  for (std::size_t i = 0; i < oh; ++i) {
    const std::size_t si = i / factor;
    for (std::size_t j = 0; j < ow; ++j) {
      const std::size_t sj = j / factor;
      const double* src = av.data() + (si * w + sj) * ch;
      double* dst = out.data() + (i * ow + j) * ch;
      for (std::size_t cidx = 0; cidx < ch; ++cidx) dst[cidx] = src[cidx];
    }
  }
  const std::size_t ia = a.id();
  return emplace({oh, ow, ch}, std::move(out), a.requires_grad(), "upsample_nn",
                 [ia, h, w, ch, factor](Tape& t, const std::vector<double>& up) {
                   if (!t.nodes_[ia].requires_grad) return;
                   auto& g = t.adjoint(ia, h * w * ch);
                   const std::size_t ow = w * factor;
                   for (std::size_t i = 0; i < h * factor; ++i) {
                     const std::size_t si = i / factor;
                     for (std::size_t j = 0; j < ow; ++j) {
                       const std::size_t sj = j / factor;
                       const double* u = up.data() + (i * ow + j) * ch;
                       double* dst = g.data() + (si * w + sj) * ch;
                       for (std::size_t cidx = 0; cidx < ch; ++cidx) dst[cidx] += u[cidx];
                     }
                   }
                 });
}

Tape::GradMap Tape::backward(const Tensor& loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss lives on another tape");
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                shape_to_string(loss.shape()));
  }
  adjoints_.assign(nodes_.size(), {});
  adjoints_[loss.id()] = {1.0};
  // Creation order is topological, so one reverse sweep visits every recorded
  // op exactly once.
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!node.requires_grad || node.is_leaf) continue;
    if (adjoints_[i].empty()) continue;
    node.pull(*this, adjoints_[i]);
  }
  GradMap grads;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    if (!node.is_leaf || !node.requires_grad) continue;
    if (adjoints_[i].empty()) {
      grads.emplace(i, std::vector<double>(node.values.size(), 0.0));
    } else {
      grads.emplace(i, adjoints_[i]);
    }
  }
  adjoints_.clear();
  return grads;
}

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f,
                  const std::vector<double>& x, double h) {
  for (double v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument("grad_check: non-finite input");
  }
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor xt = tape.leaf({x.size()}, x, true);
    Tensor y = f(tape, xt);
    if (y.size() != 1) throw std::invalid_argument("grad_check: function must be scalar-valued");
    auto grads = tape.backward(y);
    analytic = grads.at(xt.id());
  }
  auto eval = [&](const std::vector<double>& p) {
    Tape tape;
    Tensor xt = tape.leaf({p.size()}, p, false);
    const double v = f(tape, xt).scalar();
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite function value");
    return v;
  };
  double worst = 0.0;
  std::vector<double> p(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    p[i] = x[i] + h;
    const double fp = eval(p);
    p[i] = x[i] - h;
    const double fm = eval(p);
    p[i] = x[i];
    const double cd = (fp - fm) / (2.0 * h);
    const double err = std::fabs(analytic[i] - cd) / std::max(1.0, std::fabs(cd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace facegen
