#include "ccopf/conic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

#include <Eigen/SparseCholesky>
#include <json.hpp>

#include "ccopf/error.hpp"

namespace ccopf {

using Eigen::Index;
using Eigen::VectorXd;

double ConicProgram::objective(const VectorXd& x) const {
  return 0.5 * x.dot(Q * x) + c.dot(x) + offset;
}

std::string_view to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::PrimalInfeasible: return "PrimalInfeasible";
    case SolveStatus::DualInfeasible: return "DualInfeasible";
    case SolveStatus::IterLimit: return "IterLimit";
    case SolveStatus::NumericalFailure: return "NumericalFailure";
  }
  return "Unknown";
}

void validate_program(const ConicProgram& p) {
  const Index n = p.num_vars();
  auto fail = [](const std::string& m) { throw Error(Errc::InvalidProgram, m); };
  if (p.Q.rows() != n || p.Q.cols() != n) fail("Q must be n x n");
  if (p.A.rows() != p.b.size() || p.A.cols() != n) fail("A must be m_eq x n");
  if (p.G.rows() != p.h.size() || p.G.cols() != n) fail("G must be m_cone x n");
  Index rows = 0;
  for (const Cone& k : p.cones) {
    if (k.dim <= 0) fail("cone with non-positive dimension");
    rows += k.dim;
  }
  if (rows != p.h.size()) fail("cone dimensions do not cover the rows of G");
  if (!p.c.allFinite() || !p.b.allFinite() || !p.h.allFinite() || !std::isfinite(p.offset)) {
    fail("non-finite data");
  }
  for (const SparseMatrix* m : {&p.Q, &p.A, &p.G}) {
    for (Index k = 0; k < m->outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(*m, k); it; ++it) {
        if (!std::isfinite(it.value())) fail("non-finite matrix entry");
      }
    }
  }
  const SparseMatrix qt = p.Q.transpose();
  const double asym = (p.Q - qt).cwiseAbs().sum();
  const double scale = std::max(1.0, p.Q.cwiseAbs().sum());
  if (asym > 1e-12 * scale) fail("Q is not symmetric");
  if (p.Q.nonZeros() > 0) {
    // PSD check: LDL' of Q + tiny shift must have (numerically) nonnegative pivots.
    SparseMatrix shifted = p.Q;
    double maxdiag = 0.0;
    for (Index i = 0; i < n; ++i) maxdiag = std::max(maxdiag, std::abs(p.Q.coeff(i, i)));
    const double shift = 1e-10 * std::max(1.0, maxdiag);
    for (Index i = 0; i < n; ++i) shifted.coeffRef(i, i) += shift;
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(shifted);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() < -1e-8 * std::max(1.0, maxdiag)) {
      fail("Q is not positive semidefinite");
    }
  }
}

double cone_violation(const std::vector<Cone>& cones, const VectorXd& v) {
  double worst = 0.0;
  Index at = 0;
  for (const Cone& k : cones) {
    if (k.kind == Cone::Kind::NonNegative) {
      for (Index i = 0; i < k.dim; ++i) worst = std::max(worst, -v[at + i]);
    } else {
      const double tail = v.segment(at + 1, k.dim - 1).norm();
      worst = std::max(worst, tail - v[at]);
    }
    at += k.dim;
  }
  return worst;
}

namespace {

enum class BlockKind { Zero, NonNeg, Soc };

struct Block {
  BlockKind kind;
  Index start, dim;
};

// ---- second-order cone algebra --------------------------------------------

double soc_residual(const double* u, Index d) {
  double t = 0.0;
  for (Index i = 1; i < d; ++i) t += u[i] * u[i];
  return u[0] * u[0] - t;
}

// Largest step a >= 0 with u + a du in the cone (capped at `cap`).
double soc_step(const double* u, const double* du, Index d, double cap) {
  double a = du[0] * du[0], b = u[0] * du[0], c = u[0] * u[0];
  for (Index i = 1; i < d; ++i) {
    a -= du[i] * du[i];
    b -= u[i] * du[i];
    c -= u[i] * u[i];
  }
  b *= 2.0;
  double step = cap;
  if (du[0] < 0.0) step = std::min(step, -u[0] / du[0]);
  c = std::max(c, 0.0);
  const double disc = b * b - 4.0 * a * c;
  if (a == 0.0) {
    if (b < 0.0) step = std::min(step, -c / b);
  } else if (disc >= 0.0) {
    const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
    for (double r : {q / a, q != 0.0 ? c / q : std::numeric_limits<double>::infinity()}) {
      if (r > 0.0) step = std::min(step, r);
    }
  }
  return std::max(step, 0.0);
}

// ---- scaled problem ---------------------------------------------------------

struct Scaled {
  SparseMatrix P;  // full symmetric
  SparseMatrix A;  // stacked [A; G]
  VectorXd q, b;
  VectorXd d, e;  // variable / row scalings
  double cost = 1.0;
};

VectorXd col_inf_norms(const SparseMatrix& m) {
  VectorXd out = VectorXd::Zero(m.cols());
  for (Index k = 0; k < m.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
      out[it.col()] = std::max(out[it.col()], std::abs(it.value()));
    }
  }
  return out;
}

VectorXd row_inf_norms(const SparseMatrix& m) {
  VectorXd out = VectorXd::Zero(m.rows());
  for (Index k = 0; k < m.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
      out[it.row()] = std::max(out[it.row()], std::abs(it.value()));
    }
  }
  return out;
}

double clamp_norm(double v) {
  if (v < 1e-4) return v == 0.0 ? 1.0 : 1e-4;
  return std::min(v, 1e4);
}

Scaled equilibrate(const SparseMatrix& P, const SparseMatrix& A, const VectorXd& q,
                   const VectorXd& b, const std::vector<Block>& blocks, bool enabled) {
  Scaled s{P, A, q, b, VectorXd::Ones(q.size()), VectorXd::Ones(b.size()), 1.0};
  if (!enabled) return s;
  for (int pass = 0; pass < 15; ++pass) {
    const VectorXd cp = col_inf_norms(s.P), ca = col_inf_norms(s.A);
    const VectorXd ra = row_inf_norms(s.A);
    VectorXd dd(q.size()), ee(b.size());
    for (Index j = 0; j < dd.size(); ++j) dd[j] = 1.0 / std::sqrt(clamp_norm(std::max(cp[j], ca[j])));
    for (const Block& blk : blocks) {
      if (blk.kind == BlockKind::Soc) {
        const double m = ra.segment(blk.start, blk.dim).maxCoeff();
        ee.segment(blk.start, blk.dim).setConstant(1.0 / std::sqrt(clamp_norm(m)));
      } else {
        for (Index i = blk.start; i < blk.start + blk.dim; ++i) ee[i] = 1.0 / std::sqrt(clamp_norm(ra[i]));
      }
    }
    s.P = dd.asDiagonal() * s.P * dd.asDiagonal();
    s.A = ee.asDiagonal() * s.A * dd.asDiagonal();
    s.d.array() *= dd.array();
    s.e.array() *= ee.array();
  }
  s.q = s.d.cwiseProduct(q);
  s.b = s.e.cwiseProduct(b);
  const VectorXd cp = col_inf_norms(s.P);
  const double mean_p = cp.size() ? cp.mean() : 0.0;
  double qn = s.q.size() ? s.q.lpNorm<Eigen::Infinity>() : 0.0;
  double scale = std::max(mean_p, qn);
  if (scale <= 0.0) scale = 1.0;
  s.cost = 1.0 / std::clamp(scale, 1e-4, 1e4);
  s.P *= s.cost;
  s.q *= s.cost;
  return s;
}

// ---- interior point ---------------------------------------------------------

class Ipm {
 public:
  Ipm(const Scaled& sc, std::vector<Block> blocks, const SolverOptions& opts)
      : sc_(sc), blocks_(std::move(blocks)), opts_(opts), n_(sc.q.size()), m_(sc.b.size()) {
    At_ = sc_.A.transpose();
    w_ = VectorXd::Ones(m_);
    lambda_ = VectorXd::Zero(m_);
    eta_.assign(blocks_.size(), 1.0);
    degree_ = 0;
    for (const Block& b : blocks_) {
      if (b.kind == BlockKind::NonNeg) degree_ += static_cast<double>(b.dim);
      if (b.kind == BlockKind::Soc) degree_ += 1.0;
    }
  }

  // Result in scaled space; x, z, s are not divided by tau.
  struct State {
    VectorXd x, z, s;
    double tau = 1.0, kappa = 1.0;
  };

  SolveStatus run(State& st, int& iterations, double& r_primal, double& r_dual, double& gap);

 private:
  void update_scaling(const State& st);
  void apply_w(const Block& b, Index k, const double* in, double* out, bool inverse) const;
  VectorXd w_times(const VectorXd& v, bool inverse) const;
  VectorXd h_times(const VectorXd& v) const;
  VectorXd jordan(const VectorXd& u, const VectorXd& v) const;
  VectorXd jordan_div(const VectorXd& l, const VectorXd& d) const;
  bool factor();
  void kkt_solve(const VectorXd& rx, const VectorXd& rz, VectorXd& x, VectorXd& z);
  double max_step(const State& st, const VectorXd& dz, const VectorXd& ds, double dtau,
                  double dkappa) const;
  VectorXd unit_e() const;
  void shift_into_cone(VectorXd& v) const;

  const Scaled& sc_;
  std::vector<Block> blocks_;
  const SolverOptions& opts_;
  Index n_, m_;
  SparseMatrix At_;
  VectorXd w_, lambda_;
  std::vector<double> eta_;
  double degree_;
  double reg_ = 1e-9;
  SparseMatrix kkt_;
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower> ldlt_;
  bool analyzed_ = false;
};

void Ipm::apply_w(const Block& b, Index k, const double* in, double* out, bool inverse) const {
  // NT scaling W = eta [[w0, w1'], [w1, I + w1 w1'/(1 + w0)]]; its inverse
  // flips the sign of the off-diagonal blocks and divides by eta.
  const double* w = w_.data() + b.start;
  const double eta = eta_[static_cast<size_t>(k)];
  const double sgn = inverse ? -1.0 : 1.0;
  const double scale = inverse ? 1.0 / eta : eta;
  double w1x1 = 0.0;
  for (Index i = 1; i < b.dim; ++i) w1x1 += w[i] * in[i];
  const double out0 = w[0] * in[0] + sgn * w1x1;
  const double coef = sgn * in[0] + w1x1 / (1.0 + w[0]);
  for (Index i = 1; i < b.dim; ++i) out[i] = scale * (in[i] + coef * w[i]);
  out[0] = scale * out0;
}

VectorXd Ipm::w_times(const VectorXd& v, bool inverse) const {
  VectorXd out = VectorXd::Zero(m_);
  for (size_t k = 0; k < blocks_.size(); ++k) {
    const Block& b = blocks_[k];
    switch (b.kind) {
      case BlockKind::Zero: break;
      case BlockKind::NonNeg:
        for (Index i = b.start; i < b.start + b.dim; ++i) out[i] = inverse ? v[i] / w_[i] : v[i] * w_[i];
        break;
      case BlockKind::Soc:
        apply_w(b, static_cast<Index>(k), v.data() + b.start, out.data() + b.start, inverse);
        break;
    }
  }
  return out;
}

VectorXd Ipm::h_times(const VectorXd& v) const { return w_times(w_times(v, false), false); }

VectorXd Ipm::jordan(const VectorXd& u, const VectorXd& v) const {
  VectorXd out = VectorXd::Zero(m_);
  for (const Block& b : blocks_) {
    if (b.kind == BlockKind::NonNeg) {
      out.segment(b.start, b.dim) = u.segment(b.start, b.dim).cwiseProduct(v.segment(b.start, b.dim));
    } else if (b.kind == BlockKind::Soc) {
      const auto us = u.segment(b.start, b.dim), vs = v.segment(b.start, b.dim);
      out[b.start] = us.dot(vs);
      out.segment(b.start + 1, b.dim - 1) = us[0] * vs.tail(b.dim - 1) + vs[0] * us.tail(b.dim - 1);
    }
  }
  return out;
}

VectorXd Ipm::jordan_div(const VectorXd& l, const VectorXd& d) const {
  VectorXd out = VectorXd::Zero(m_);
  for (const Block& b : blocks_) {
    if (b.kind == BlockKind::NonNeg) {
      out.segment(b.start, b.dim) = d.segment(b.start, b.dim).cwiseQuotient(l.segment(b.start, b.dim));
    } else if (b.kind == BlockKind::Soc) {
      const auto ls = l.segment(b.start, b.dim), ds = d.segment(b.start, b.dim);
      const auto l1 = ls.tail(b.dim - 1), d1 = ds.tail(b.dim - 1);
      const double det = ls[0] * ls[0] - l1.squaredNorm();
      const double x0 = (ls[0] * ds[0] - l1.dot(d1)) / det;
      out[b.start] = x0;
      out.segment(b.start + 1, b.dim - 1) = (d1 - x0 * l1) / ls[0];
    }
  }
  return out;
}

VectorXd Ipm::unit_e() const {
  VectorXd e = VectorXd::Zero(m_);
  for (const Block& b : blocks_) {
    if (b.kind == BlockKind::NonNeg) e.segment(b.start, b.dim).setOnes();
    if (b.kind == BlockKind::Soc) e[b.start] = 1.0;
  }
  return e;
}

void Ipm::shift_into_cone(VectorXd& v) const {
  for (const Block& b : blocks_) {
    if (b.kind == BlockKind::Zero) {
      continue;
    }
    double lo;
    if (b.kind == BlockKind::NonNeg) {
      lo = v.segment(b.start, b.dim).minCoeff();
    } else {
      lo = v[b.start] - v.segment(b.start + 1, b.dim - 1).norm();
    }
    if (lo < 1.0) {
      const double shift = 1.0 - lo;
      if (b.kind == BlockKind::NonNeg) {
        v.segment(b.start, b.dim).array() += shift;
      } else {
        v[b.start] += shift;
      }
    }
  }
}

void Ipm::update_scaling(const State& st) {
  for (size_t k = 0; k < blocks_.size(); ++k) {
    const Block& b = blocks_[k];
    if (b.kind == BlockKind::NonNeg) {
      for (Index i = b.start; i < b.start + b.dim; ++i) {
        w_[i] = std::sqrt(st.s[i] / st.z[i]);
        lambda_[i] = std::sqrt(st.s[i] * st.z[i]);
      }
    } else if (b.kind == BlockKind::Soc) {
      const double* s = st.s.data() + b.start;
      const double* z = st.z.data() + b.start;
      const double sres = std::sqrt(std::max(soc_residual(s, b.dim), 1e-300));
      const double zres = std::sqrt(std::max(soc_residual(z, b.dim), 1e-300));
      double dot = 0.0;
      for (Index i = 0; i < b.dim; ++i) dot += (s[i] / sres) * (z[i] / zres);
      const double gamma = std::sqrt(std::max((1.0 + dot) / 2.0, 1e-300));
      double* w = w_.data() + b.start;
      w[0] = (s[0] / sres + z[0] / zres) / (2.0 * gamma);
      for (Index i = 1; i < b.dim; ++i) w[i] = (s[i] / sres - z[i] / zres) / (2.0 * gamma);
      // renormalize so that w0^2 - |w1|^2 = 1 exactly
      double tail = 0.0;
      for (Index i = 1; i < b.dim; ++i) tail += w[i] * w[i];
      w[0] = std::sqrt(1.0 + tail);
      eta_[k] = std::sqrt(sres / zres);
      apply_w(b, static_cast<Index>(k), z, lambda_.data() + b.start, false);
    }
  }
}

bool Ipm::factor() {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<size_t>(sc_.P.nonZeros() + sc_.A.nonZeros() + n_ + m_));
  for (Index k = 0; k < sc_.P.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(sc_.P, k); it; ++it) {
      if (it.row() > it.col()) trip.emplace_back(it.row(), it.col(), it.value());
    }
  }
  for (Index i = 0; i < n_; ++i) trip.emplace_back(i, i, sc_.P.coeff(i, i) + reg_);
  for (Index k = 0; k < sc_.A.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(sc_.A, k); it; ++it) {
      trip.emplace_back(n_ + it.row(), it.col(), it.value());
    }
  }
  for (size_t k = 0; k < blocks_.size(); ++k) {
    const Block& b = blocks_[k];
    const Index o = n_ + b.start;
    switch (b.kind) {
      case BlockKind::Zero:
        for (Index i = 0; i < b.dim; ++i) trip.emplace_back(o + i, o + i, -reg_);
        break;
      case BlockKind::NonNeg:
        for (Index i = 0; i < b.dim; ++i) {
          const double w = w_[b.start + i];
          trip.emplace_back(o + i, o + i, -(w * w) - reg_);
        }
        break;
      case BlockKind::Soc: {
        // H = eta^2 (2 w w' - J)
        const double e2 = eta_[k] * eta_[k];
        const double* w = w_.data() + b.start;
        for (Index j = 0; j < b.dim; ++j) {
          for (Index i = j; i < b.dim; ++i) {
            double h = 2.0 * w[i] * w[j];
            if (i == j) h += (i == 0) ? -1.0 : 1.0;
            trip.emplace_back(o + i, o + j, -e2 * h - (i == j ? reg_ : 0.0));
          }
        }
        break;
      }
    }
  }
  kkt_.resize(n_ + m_, n_ + m_);
  kkt_.setFromTriplets(trip.begin(), trip.end());
  if (!analyzed_) {
    ldlt_.analyzePattern(kkt_);
    analyzed_ = true;
  }
  ldlt_.factorize(kkt_);
  return ldlt_.info() == Eigen::Success && ldlt_.vectorD().allFinite();
}

void Ipm::kkt_solve(const VectorXd& rx, const VectorXd& rz, VectorXd& x, VectorXd& z) {
  VectorXd rhs(n_ + m_);
  rhs << rx, rz;
  VectorXd sol = ldlt_.solve(rhs);
  // Iterative refinement against the unregularized operator.
  auto apply = [&](const VectorXd& v) {
    VectorXd out(n_ + m_);
    const auto vx = v.head(n_);
    const VectorXd vz = v.tail(m_);
    out.head(n_) = sc_.P * vx + At_ * vz;
    out.tail(m_) = sc_.A * vx - h_times(vz);
    return out;
  };
  double norm = (rhs - apply(sol)).lpNorm<Eigen::Infinity>();
  for (int k = 0; k < opts_.refinement_steps; ++k) {
    const VectorXd r = rhs - apply(sol);
    const double rn = r.lpNorm<Eigen::Infinity>();
    if (rn <= 1e-14 * std::max(1.0, rhs.lpNorm<Eigen::Infinity>())) break;
    VectorXd trial = sol + ldlt_.solve(r);
    const double tn = (rhs - apply(trial)).lpNorm<Eigen::Infinity>();
    if (!(tn < norm)) break;
    sol = std::move(trial);
    norm = tn;
  }
  x = sol.head(n_);
  z = sol.tail(m_);
}

double Ipm::max_step(const State& st, const VectorXd& dz, const VectorXd& ds, double dtau,
                     double dkappa) const {
  double a = std::numeric_limits<double>::infinity();
  if (dtau < 0.0) a = std::min(a, -st.tau / dtau);
  if (dkappa < 0.0) a = std::min(a, -st.kappa / dkappa);
  for (const Block& b : blocks_) {
    if (b.kind == BlockKind::NonNeg) {
      for (Index i = b.start; i < b.start + b.dim; ++i) {
        if (dz[i] < 0.0) a = std::min(a, -st.z[i] / dz[i]);
        if (ds[i] < 0.0) a = std::min(a, -st.s[i] / ds[i]);
      }
    } else if (b.kind == BlockKind::Soc) {
      a = std::min(a, soc_step(st.z.data() + b.start, dz.data() + b.start, b.dim, a));
      a = std::min(a, soc_step(st.s.data() + b.start, ds.data() + b.start, b.dim, a));
    }
  }
  return a;
}

SolveStatus Ipm::run(State& st, int& iterations, double& r_primal, double& r_dual, double& gap) {
  const VectorXd& q = sc_.q;
  const VectorXd& bvec = sc_.b;
  const double tol = opts_.tolerance;
  reg_ = opts_.static_regularization;

  // Unscaled norms used by the termination test.
  const VectorXd q_orig = sc_.q.cwiseQuotient(sc_.d) / sc_.cost;
  const VectorXd b_orig = sc_.b.cwiseQuotient(sc_.e);
  const double qn = q_orig.size() ? q_orig.lpNorm<Eigen::Infinity>() : 0.0;
  const double bn = b_orig.size() ? b_orig.lpNorm<Eigen::Infinity>() : 0.0;

  // Initial point from [P A'; A -I][x; z] = [-q; b], s = -z shifted into K.
  w_.setOnes();
  for (auto& e : eta_) e = 1.0;
  for (const Block& b : blocks_) {
    if (b.kind == BlockKind::Soc) {
      w_[b.start] = 1.0;
      w_.segment(b.start + 1, b.dim - 1).setZero();
    }
  }
  if (!factor()) return SolveStatus::NumericalFailure;
  kkt_solve(-q, bvec, st.x, st.z);
  st.s = -st.z;
  for (const Block& b : blocks_) {
    if (b.kind == BlockKind::Zero) st.s.segment(b.start, b.dim).setZero();
  }
  shift_into_cone(st.s);
  shift_into_cone(st.z);
  st.tau = 1.0;
  st.kappa = 1.0;

  const VectorXd e = unit_e();
  int stalls = 0;
  for (int iter = 0;; ++iter) {
    iterations = iter;
    const VectorXd px = sc_.P * st.x;
    const VectorXd rx = px + At_ * st.z + q * st.tau;
    const VectorXd rz = sc_.A * st.x + st.s - bvec * st.tau;
    const double xpx = st.x.dot(px);
    const double rtau = q.dot(st.x) + bvec.dot(st.z) + xpx / st.tau + st.kappa;

    // termination in original units
    const VectorXd x = sc_.d.cwiseProduct(st.x) / st.tau;
    const VectorXd s = st.s.cwiseQuotient(sc_.e) / st.tau;
    const VectorXd z = sc_.e.cwiseProduct(st.z) / (sc_.cost * st.tau);
    const VectorXd rp = rz.cwiseQuotient(sc_.e) / st.tau;
    const VectorXd rd = rx.cwiseQuotient(sc_.d) / (sc_.cost * st.tau);
    const double xn = x.size() ? x.lpNorm<Eigen::Infinity>() : 0.0;
    const double sn = s.size() ? s.lpNorm<Eigen::Infinity>() : 0.0;
    const double zn = z.size() ? z.lpNorm<Eigen::Infinity>() : 0.0;
    const double pcost = 0.5 * xpx / (st.tau * st.tau) / sc_.cost + q.dot(st.x) / (sc_.cost * st.tau);
    const double dcost = -0.5 * xpx / (st.tau * st.tau) / sc_.cost - bvec.dot(st.z) / (sc_.cost * st.tau);
    r_primal = (rp.size() ? rp.lpNorm<Eigen::Infinity>() : 0.0) / std::max(1.0, bn + xn + sn);
    r_dual = (rd.size() ? rd.lpNorm<Eigen::Infinity>() : 0.0) / std::max(1.0, qn + xn + zn);
    gap = std::abs(pcost - dcost) / std::max(1.0, std::min(std::abs(pcost), std::abs(dcost)));

    const double sz = st.s.dot(st.z);
    const double mu = (sz + st.tau * st.kappa) / (degree_ + 1.0);

    if (opts_.log != nullptr) {
      nlohmann::json j{{"iter", iter},   {"pcost", pcost}, {"dcost", dcost}, {"gap", gap},
                       {"pres", r_primal}, {"dres", r_dual}, {"mu", mu},     {"tau", st.tau},
                       {"kappa", st.kappa}};
      *opts_.log << j.dump() << '\n';
    }
    if (opts_.verbosity > 0) {
      std::ostringstream line;
      line << std::setw(3) << iter << std::scientific << std::setprecision(3) << "  pcost " << pcost
           << "  gap " << gap << "  pres " << r_primal << "  dres " << r_dual << "  mu " << mu;
      std::fprintf(stderr, "%s\n", line.str().c_str());
    }

    if (r_primal <= tol && r_dual <= tol && gap <= tol) return SolveStatus::Optimal;

    // infeasibility certificates (unnormalized by tau)
    {
      const VectorXd zc = sc_.e.cwiseProduct(st.z);
      const VectorXd xc = sc_.d.cwiseProduct(st.x);
      const double btz = b_orig.dot(zc);
      const double qtx = q_orig.dot(xc);
      if (btz < 0.0 && st.tau < st.kappa) {
        const VectorXd atz = (At_ * st.z).cwiseQuotient(sc_.d);
        if (atz.lpNorm<Eigen::Infinity>() <= tol * (-btz) && -btz > tol * zc.lpNorm<Eigen::Infinity>()) {
          return SolveStatus::PrimalInfeasible;
        }
      }
      if (qtx < 0.0 && st.tau < st.kappa) {
        const VectorXd pxc = (sc_.P * st.x).cwiseQuotient(sc_.d) / sc_.cost;
        const VectorXd axs = (sc_.A * st.x + st.s).cwiseQuotient(sc_.e);
        const double lim = tol * (-qtx);
        if (pxc.lpNorm<Eigen::Infinity>() <= lim && axs.lpNorm<Eigen::Infinity>() <= lim &&
            -qtx > tol * xc.lpNorm<Eigen::Infinity>()) {
          return SolveStatus::DualInfeasible;
        }
      }
    }
    if (iter >= opts_.max_iter) return SolveStatus::IterLimit;
    if (!rx.allFinite() || !rz.allFinite() || !std::isfinite(rtau)) return SolveStatus::NumericalFailure;

    update_scaling(st);
    if (!factor()) {
      reg_ *= 100.0;
      if (reg_ > 1e-4 || !factor()) return SolveStatus::NumericalFailure;
    }

    VectorXd x2, z2;
    kkt_solve(-q, bvec, x2, z2);
    const VectorXd xi = st.x / st.tau;
    const VectorXd q2p = q + 2.0 * (sc_.P * xi);
    const double xipxi = xi.dot(sc_.P * xi);
    const double denom = q2p.dot(x2) + bvec.dot(z2) - xipxi - st.kappa / st.tau;

    auto direction = [&](double sigma, const VectorXd& ds, double dkappa, VectorXd& dx, VectorXd& dz,
                         VectorXd& dsv, double& dtau, double& dk) {
      const VectorXd lds = w_times(jordan_div(lambda_, ds), false);
      VectorXd x1, z1;
      kkt_solve(-(1.0 - sigma) * rx, -(1.0 - sigma) * rz - lds, x1, z1);
      dtau = (-(1.0 - sigma) * rtau - dkappa / st.tau - q2p.dot(x1) - bvec.dot(z1)) / denom;
      dx = x1 + dtau * x2;
      dz = z1 + dtau * z2;
      dsv = lds - h_times(dz);
      for (const Block& b : blocks_) {
        if (b.kind == BlockKind::Zero) dsv.segment(b.start, b.dim).setZero();
      }
      dk = (dkappa - st.kappa * dtau) / st.tau;
    };

    // predictor
    VectorXd dx, dz, dsv;
    double dtau = 0.0, dk = 0.0;
    const VectorXd ds_aff = -jordan(lambda_, lambda_);
    direction(0.0, ds_aff, -st.tau * st.kappa, dx, dz, dsv, dtau, dk);
    const double a_aff = std::min(1.0, max_step(st, dz, dsv, dtau, dk));
    const double sigma = std::pow(1.0 - a_aff, 3);

    // corrector
    const VectorXd corr = jordan(w_times(dsv, true), w_times(dz, false));
    const VectorXd ds_cc = -jordan(lambda_, lambda_) - corr + sigma * mu * e;
    const double dk_cc = -st.tau * st.kappa - dtau * dk + sigma * mu;
    direction(sigma, ds_cc, dk_cc, dx, dz, dsv, dtau, dk);
    const double a = std::min(1.0, 0.99 * max_step(st, dz, dsv, dtau, dk));
    if (!dx.allFinite() || !dz.allFinite() || !std::isfinite(dtau)) return SolveStatus::NumericalFailure;

    st.x += a * dx;
    st.z += a * dz;
    st.s += a * dsv;
    st.tau += a * dtau;
    st.kappa += a * dk;

    stalls = a < 1e-10 ? stalls + 1 : 0;
    if (stalls >= 5) return SolveStatus::NumericalFailure;
  }
}

}  // namespace

SolveResult solve(const ConicProgram& prog, const SolverOptions& opts) {
  validate_program(prog);
  const Index n = prog.num_vars(), meq = prog.num_eq(), mc = prog.num_cone_rows();

  std::vector<Block> blocks;
  if (meq > 0) blocks.push_back({BlockKind::Zero, 0, meq});
  Index at = meq;
  for (const Cone& k : prog.cones) {
    blocks.push_back({k.kind == Cone::Kind::NonNegative ? BlockKind::NonNeg : BlockKind::Soc, at, k.dim});
    at += k.dim;
  }

  SparseMatrix stacked(meq + mc, n);
  {
    std::vector<Eigen::Triplet<double>> trip;
    for (Index k = 0; k < prog.A.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(prog.A, k); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
    }
    for (Index k = 0; k < prog.G.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(prog.G, k); it; ++it) trip.emplace_back(meq + it.row(), it.col(), it.value());
    }
    stacked.setFromTriplets(trip.begin(), trip.end());
  }
  VectorXd bstack(meq + mc);
  bstack << prog.b, prog.h;

  const Scaled sc = equilibrate(prog.Q, stacked, prog.c, bstack, blocks, opts.equilibrate);
  Ipm ipm(sc, blocks, opts);
  Ipm::State st;
  SolveResult res;
  res.status = ipm.run(st, res.iterations, res.r_primal, res.r_dual, res.gap);

  const bool certificate = res.status == SolveStatus::PrimalInfeasible || res.status == SolveStatus::DualInfeasible;
  const double tau = certificate ? 1.0 : st.tau;
  const double zscale = certificate ? 1.0 : sc.cost;
  VectorXd x = st.x.size() ? VectorXd(sc.d.cwiseProduct(st.x) / tau) : VectorXd::Zero(n);
  VectorXd zall = st.z.size() ? VectorXd(sc.e.cwiseProduct(st.z) / (zscale * tau)) : VectorXd::Zero(meq + mc);
  VectorXd sall = st.s.size() ? VectorXd(st.s.cwiseQuotient(sc.e) / tau) : VectorXd::Zero(meq + mc);
  if (res.status == SolveStatus::PrimalInfeasible) {
    const double nb = -bstack.dot(zall);
    if (nb > 0.0) zall /= nb;
  }
  if (res.status == SolveStatus::DualInfeasible) {
    const double nq = -prog.c.dot(x);
    if (nq > 0.0) x /= nq;
  }
  res.x = x;
  res.y = zall.head(meq);
  res.z = zall.tail(mc);
  res.s = sall.tail(mc);
  res.objective = prog.objective(res.x);
  res.dual_objective = -0.5 * res.x.dot(prog.Q * res.x) - prog.b.dot(res.y) - prog.h.dot(res.z) + prog.offset;
  return res;
}

KktResiduals kkt_residuals(const ConicProgram& prog, const SolveResult& r) {
  KktResiduals k;
  const VectorXd& x = r.x;
  const VectorXd qx = prog.Q * x;
  const VectorXd slack = prog.h - prog.G * x;
  const double eq = prog.num_eq() ? (prog.A * x - prog.b).lpNorm<Eigen::Infinity>() : 0.0;
  const double cone = cone_violation(prog.cones, slack);
  const double pscale = std::max({1.0, prog.b.size() ? prog.b.lpNorm<Eigen::Infinity>() : 0.0,
                                  prog.h.size() ? prog.h.lpNorm<Eigen::Infinity>() : 0.0});
  k.r_primal = std::max(eq, cone) / pscale;
  const VectorXd stat = qx + prog.c + prog.A.transpose() * r.y + prog.G.transpose() * r.z;
  const double dscale = std::max(1.0, prog.c.size() ? prog.c.lpNorm<Eigen::Infinity>() : 0.0);
  k.r_dual = (stat.size() ? stat.lpNorm<Eigen::Infinity>() : 0.0) / dscale;
  const double pobj = 0.5 * x.dot(qx) + prog.c.dot(x);
  const double dobj = -0.5 * x.dot(qx) - prog.b.dot(r.y) - prog.h.dot(r.z);
  k.gap = std::abs(pobj - dobj) / std::max(1.0, std::abs(pobj));
  k.complementarity = slack.dot(r.z);
  k.dual_cone_violation = cone_violation(prog.cones, r.z);
  return k;
}

std::string export_program(const ConicProgram& p) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "# ccopf conic program v1: min 1/2 x'Qx + c'x + offset s.t. Ax = b, h - Gx in K\n";
  out << "dims " << p.num_vars() << ' ' << p.num_eq() << ' ' << p.num_cone_rows() << '\n';
  out << "offset " << p.offset << '\n';
  auto mat = [&](const char* name, const SparseMatrix& m) {
    out << name << ' ' << m.nonZeros() << '\n';
    for (Index k = 0; k < m.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
        out << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
      }
    }
  };
  auto vec = [&](const char* name, const VectorXd& v) {
    out << name << ' ' << v.size() << '\n';
    for (Index i = 0; i < v.size(); ++i) out << v[i] << '\n';
  };
  mat("Q", p.Q);
  vec("c", p.c);
  mat("A", p.A);
  vec("b", p.b);
  mat("G", p.G);
  vec("h", p.h);
  out << "cones " << p.cones.size() << '\n';
  for (const Cone& k : p.cones) out << (k.kind == Cone::Kind::NonNegative ? "l " : "q ") << k.dim << '\n';
  return out.str();
}

}  // namespace ccopf
