// SPDX-License-Identifier: Apache-2.0
#include "hld/nn/gru.hpp"

#include <cmath>
#include <string>

#include "hld/nn/mlp.hpp"
#include "hld/util/error.hpp"
#include "hld/util/rng.hpp"

namespace hld::nn {
namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void expect_shape(const Tensor& t, const ad::Shape& shape, const char* name) {
  if (!t.defined() || t.shape() != shape) {
    throw Error(ErrorCode::ShapeMismatch, std::string("GRU ") + name + " expected " +
                                              ad::shape_string(shape) + ", got " +
                                              (t.defined() ? ad::shape_string(t.shape()) : "undefined"));
  }
}

// Transposes a row-major (rows x cols) block into dst with row stride
// `stride`, starting at column `offset`: dst[j * stride + offset + i] = src[i * cols + j].
void transpose_into(std::span<const double> src, std::size_t rows, std::size_t cols,
                    std::vector<double>& dst, std::size_t stride, std::size_t offset) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) dst[j * stride + offset + i] = src[i * cols + j];
}

// y[0..n) += a * x[0..n)
inline void axpy(double* __restrict y, double a, const double* __restrict x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace

GruParams GruParams::zeros(std::size_t input_dim, std::size_t hidden_dim) {
  GruParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.w_z = Tensor::zeros({hidden_dim, input_dim}, true);
  p.w_r = Tensor::zeros({hidden_dim, input_dim}, true);
  p.w_h = Tensor::zeros({hidden_dim, input_dim}, true);
  p.u_z = Tensor::zeros({hidden_dim, hidden_dim}, true);
  p.u_r = Tensor::zeros({hidden_dim, hidden_dim}, true);
  p.u_h = Tensor::zeros({hidden_dim, hidden_dim}, true);
  p.b_z = Tensor::zeros({hidden_dim}, true);
  p.b_r = Tensor::zeros({hidden_dim}, true);
  p.b_h = Tensor::zeros({hidden_dim}, true);
  return p;
}

std::vector<Tensor> GruParams::parameters() const {
  return {w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h};
}

GruParams GruParams::clone() const {
  GruParams p = *this;
  p.w_z = w_z.clone();
  p.w_r = w_r.clone();
  p.w_h = w_h.clone();
  p.u_z = u_z.clone();
  p.u_r = u_r.clone();
  p.u_h = u_h.clone();
  p.b_z = b_z.clone();
  p.b_r = b_r.clone();
  p.b_h = b_h.clone();
  return p;
}

void GruParams::validate() const {
  if (input_dim == 0 || hidden_dim == 0) throw Error(ErrorCode::ShapeMismatch, "GRU dims must be positive");
  const ad::Shape w{hidden_dim, input_dim}, u{hidden_dim, hidden_dim}, b{hidden_dim};
  expect_shape(w_z, w, "W_z");
  expect_shape(w_r, w, "W_r");
  expect_shape(w_h, w, "W_h");
  expect_shape(u_z, u, "U_z");
  expect_shape(u_r, u, "U_r");
  expect_shape(u_h, u, "U_h");
  expect_shape(b_z, b, "b_z");
  expect_shape(b_r, b, "b_r");
  expect_shape(b_h, b, "b_h");
  for (const auto& t : parameters()) ad::require_finite(t.values(), "GRU parameters");
}

Tensor gru_forward(Tape& tape, const Tensor& frames, const GruParams& params, const Tensor& h0) {
  params.validate();
  const std::size_t d = params.input_dim, H = params.hidden_dim;
  if (!frames.defined() || frames.rank() != 2) {
    throw Error(ErrorCode::ShapeMismatch, "GRU frames must be (T x d)");
  }
  if (frames.dim(1) != d) {
    throw Error(ErrorCode::ShapeMismatch, "GRU frame dim " + std::to_string(frames.dim(1)) +
                                              " != input dim " + std::to_string(d));
  }
  expect_shape(h0, {H}, "h0");
  ad::require_finite(frames.values(), "GRU frames");
  ad::require_finite(h0.values(), "GRU h0");
  const std::size_t T = frames.dim(0);
  const std::size_t G = 3 * H;

  // Transposed weights turn every matrix-vector product into a sequence of
  // contiguous axpy updates.
  std::vector<double> wt(d * G), uzr_t(H * 2 * H), uh_t(H * H);
  transpose_into(params.w_z.values(), H, d, wt, G, 0);
  transpose_into(params.w_r.values(), H, d, wt, G, H);
  transpose_into(params.w_h.values(), H, d, wt, G, 2 * H);
  transpose_into(params.u_z.values(), H, H, uzr_t, 2 * H, 0);
  transpose_into(params.u_r.values(), H, H, uzr_t, 2 * H, H);
  transpose_into(params.u_h.values(), H, H, uh_t, H, 0);

  // Per-step caches for the backward rule.
  std::vector<double> z(T * H), r(T * H), c(T * H), hprev(T * H);
  std::vector<double> states(T * H);
  std::vector<double> pre(G), rh(H);
  const auto x = frames.values();
  const auto bz = params.b_z.values(), br = params.b_r.values(), bh = params.b_h.values();
  std::vector<double> h(h0.values().begin(), h0.values().end());

  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < H; ++i) {
      pre[i] = bz[i];
      pre[H + i] = br[i];
      pre[2 * H + i] = bh[i];
    }
    for (std::size_t j = 0; j < d; ++j) axpy(pre.data(), x[t * d + j], wt.data() + j * G, G);
    for (std::size_t j = 0; j < H; ++j) axpy(pre.data(), h[j], uzr_t.data() + j * 2 * H, 2 * H);
    double* zt = z.data() + t * H;
    double* rt = r.data() + t * H;
    for (std::size_t i = 0; i < H; ++i) {
      zt[i] = sigmoid(pre[i]);
      rt[i] = sigmoid(pre[H + i]);
      rh[i] = rt[i] * h[i];
    }
    for (std::size_t j = 0; j < H; ++j) axpy(pre.data() + 2 * H, rh[j], uh_t.data() + j * H, H);
    double* ct = c.data() + t * H;
    double* hp = hprev.data() + t * H;
    double* st = states.data() + t * H;
    for (std::size_t i = 0; i < H; ++i) {
      ct[i] = std::tanh(pre[2 * H + i]);
      hp[i] = h[i];
      st[i] = (1.0 - zt[i]) * h[i] + zt[i] * ct[i];
      h[i] = st[i];
    }
  }

  Tensor out({T, H}, std::move(states));
  Tensor x_in = frames, h0_in = h0;
  GruParams p = params;
  auto backward = [x_in, h0_in, p, z = std::move(z), r = std::move(r), c = std::move(c),
                   hprev = std::move(hprev), T, d, H](std::span<const double> g) mutable {
    const auto x = x_in.values();
    const auto wz = p.w_z.values(), wr = p.w_r.values(), wh = p.w_h.values();
    const auto uz = p.u_z.values(), ur = p.u_r.values(), uh = p.u_h.values();
    std::vector<double> dwz(H * d, 0.0), dwr(H * d, 0.0), dwh(H * d, 0.0);
    std::vector<double> duz(H * H, 0.0), dur(H * H, 0.0), duh(H * H, 0.0);
    std::vector<double> dbz(H, 0.0), dbr(H, 0.0), dbh(H, 0.0);
    std::vector<double> dx(x_in.requires_grad() ? T * d : 0, 0.0);
    std::vector<double> dh(H, 0.0), dh_prev(H), daz(H), dar(H), dah(H), drh(H), rh(H);

    for (std::size_t step = T; step-- > 0;) {
      const double* zt = z.data() + step * H;
      const double* rt = r.data() + step * H;
      const double* ct = c.data() + step * H;
      const double* hp = hprev.data() + step * H;
      const double* xt = x.data() + step * d;
      for (std::size_t i = 0; i < H; ++i) {
        dh[i] += g[step * H + i];
        const double dz = dh[i] * (ct[i] - hp[i]);
        const double dc = dh[i] * zt[i];
        dh_prev[i] = dh[i] * (1.0 - zt[i]);
        dah[i] = dc * (1.0 - ct[i] * ct[i]);
        daz[i] = dz * zt[i] * (1.0 - zt[i]);
        rh[i] = rt[i] * hp[i];
        drh[i] = 0.0;
      }
      // d(r * h_prev) = U_h^T da_h
      for (std::size_t i = 0; i < H; ++i) axpy(drh.data(), dah[i], uh.data() + i * H, H);
      for (std::size_t i = 0; i < H; ++i) {
        const double dr = drh[i] * hp[i];
        dh_prev[i] += drh[i] * rt[i];
        dar[i] = dr * rt[i] * (1.0 - rt[i]);
      }
      for (std::size_t i = 0; i < H; ++i) {
        axpy(dh_prev.data(), daz[i], uz.data() + i * H, H);
        axpy(dh_prev.data(), dar[i], ur.data() + i * H, H);
      }
      for (std::size_t i = 0; i < H; ++i) {
        axpy(dwz.data() + i * d, daz[i], xt, d);
        axpy(dwr.data() + i * d, dar[i], xt, d);
        axpy(dwh.data() + i * d, dah[i], xt, d);
        axpy(duz.data() + i * H, daz[i], hp, H);
        axpy(dur.data() + i * H, dar[i], hp, H);
        axpy(duh.data() + i * H, dah[i], rh.data(), H);
        dbz[i] += daz[i];
        dbr[i] += dar[i];
        dbh[i] += dah[i];
      }
      if (!dx.empty()) {
        double* dxt = dx.data() + step * d;
        for (std::size_t i = 0; i < H; ++i) {
          axpy(dxt, daz[i], wz.data() + i * d, d);
          axpy(dxt, dar[i], wr.data() + i * d, d);
          axpy(dxt, dah[i], wh.data() + i * d, d);
        }
      }
      dh.swap(dh_prev);
    }

    auto accumulate = [](Tensor& t, const std::vector<double>& src) {
      if (!t.requires_grad()) return;
      auto dst = t.mutable_grad();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    };
    accumulate(p.w_z, dwz);
    accumulate(p.w_r, dwr);
    accumulate(p.w_h, dwh);
    accumulate(p.u_z, duz);
    accumulate(p.u_r, dur);
    accumulate(p.u_h, duh);
    accumulate(p.b_z, dbz);
    accumulate(p.b_r, dbr);
    accumulate(p.b_h, dbh);
    accumulate(x_in, dx);
    accumulate(h0_in, dh);
  };

  std::vector<Tensor> inputs = params.parameters();
  inputs.push_back(frames);
  inputs.push_back(h0);
  return tape.record(ad::OpKind::GruSequence, std::move(inputs), out, std::move(backward));
}

std::vector<Tensor> gru_forward_reference(Tape& tape, const Tensor& frames, const GruParams& params,
                                          const Tensor& h0) {
  params.validate();
  if (!frames.defined() || frames.rank() != 2 || frames.dim(1) != params.input_dim) {
    throw Error(ErrorCode::ShapeMismatch, "GRU frames must be (T x d)");
  }
  expect_shape(h0, {params.hidden_dim}, "h0");
  const std::size_t T = frames.dim(0), d = params.input_dim;
  std::vector<Tensor> states;
  states.reserve(T);
  Tensor h = h0;
  Tensor ones = Tensor::vector(std::vector<double>(params.hidden_dim, 1.0));
  for (std::size_t t = 0; t < T; ++t) {
    const auto row = frames.values().subspan(t * d, d);
    Tensor x = Tensor::vector({row.begin(), row.end()});
    Tensor z = tape.sigmoid(tape.add(tape.add(tape.matmul(params.w_z, x), tape.matmul(params.u_z, h)), params.b_z));
    Tensor r = tape.sigmoid(tape.add(tape.add(tape.matmul(params.w_r, x), tape.matmul(params.u_r, h)), params.b_r));
    Tensor c = tape.tanh(tape.add(
        tape.add(tape.matmul(params.w_h, x), tape.matmul(params.u_h, tape.mul(r, h))), params.b_h));
    h = tape.add(tape.mul(tape.sub(ones, z), h), tape.mul(z, c));
    states.push_back(h);
  }
  return states;
}

Tensor avg_pool(Tape& tape, const Tensor& states) {
  if (!states.defined() || states.rank() != 2) {
    throw Error(ErrorCode::EmptySequence, "avg_pool expects a non-empty (T x H) sequence");
  }
  return tape.mean(states, 0);
}

Tensor avg_pool(Tape& tape, const std::vector<Tensor>& states) {
  if (states.empty()) throw Error(ErrorCode::EmptySequence, "avg_pool of an empty sequence");
  Tensor total = states.front();
  for (std::size_t i = 1; i < states.size(); ++i) total = tape.add(total, states[i]);
  return tape.scale(total, 1.0 / static_cast<double>(states.size()));
}

GruParams init_gru(std::size_t input_dim, std::size_t hidden_dim, std::uint64_t seed) {
  if (input_dim == 0 || hidden_dim == 0) throw Error(ErrorCode::ShapeMismatch, "GRU dims must be positive");
  GruParams p = GruParams::zeros(input_dim, hidden_dim);
  p.w_z = xavier_uniform(hidden_dim, input_dim, derive_seed(seed, "gru.w_z"));
  p.w_r = xavier_uniform(hidden_dim, input_dim, derive_seed(seed, "gru.w_r"));
  p.w_h = xavier_uniform(hidden_dim, input_dim, derive_seed(seed, "gru.w_h"));
  p.u_z = xavier_uniform(hidden_dim, hidden_dim, derive_seed(seed, "gru.u_z"));
  p.u_r = xavier_uniform(hidden_dim, hidden_dim, derive_seed(seed, "gru.u_r"));
  p.u_h = xavier_uniform(hidden_dim, hidden_dim, derive_seed(seed, "gru.u_h"));
  return p;
}

}  // namespace hld::nn
