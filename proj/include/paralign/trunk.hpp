#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "paralign/core.hpp"
#include "paralign/tensor.hpp"

namespace paralign {

struct ArchSpec {
  std::size_t audio_vocab = 0;
  std::size_t text_vocab = 0;
  std::size_t d_model = 64;
  std::size_t context = 16;
  std::size_t ff_width = 128;
  std::size_t heads = 1;

  void validate() const {
    require(audio_vocab > 2 && text_vocab > 2, ErrorKind::InvalidArgument, "vocabularies must exceed PAD/EOS");
    require(d_model > 0 && context > 0 && ff_width > 0, ErrorKind::InvalidArgument, "arch sizes must be positive");
    require(heads == 1, ErrorKind::InvalidArgument, "only single-head attention is supported");
  }

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

// Summed audio+text+position embeddings, one causal single-head attention
// block and one GELU feed-forward block, both residual.
struct TrunkParams {
  Tensor audio_emb, text_emb, pos_emb;
  Tensor wq, wk, wv, wo;
  Tensor w1, b1, w2, b2;

  TrunkParams() = default;
  explicit TrunkParams(const ArchSpec& a)
      : audio_emb("audio_emb", a.audio_vocab, a.d_model),
        text_emb("text_emb", a.text_vocab, a.d_model),
        pos_emb("pos_emb", a.context, a.d_model),
        wq("wq", a.d_model, a.d_model),
        wk("wk", a.d_model, a.d_model),
        wv("wv", a.d_model, a.d_model),
        wo("wo", a.d_model, a.d_model),
        w1("w1", a.ff_width, a.d_model),
        b1("b1", a.ff_width, 1),
        w2("w2", a.d_model, a.ff_width),
        b2("b2", a.d_model, 1) {}

  template <class Self>
  static auto collect(Self& s) {
    return std::vector{&s.audio_emb, &s.text_emb, &s.pos_emb, &s.wq, &s.wk, &s.wv,
                       &s.wo,        &s.w1,       &s.b1,      &s.w2, &s.b2};
  }

  void init(Rng& rng, std::size_t d_model) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_model));
    for (Tensor* t : collect(*this))
      if (t->cols > 1) t->fill_normal(rng, scale);
  }

  friend bool operator==(const TrunkParams&, const TrunkParams&) = default;
};

// Activations of every computed position; doubles as the decoding state when
// positions are appended one at a time.
struct TrunkCache {
  std::size_t d = 0, f = 0, cap = 0, n = 0;
  std::vector<Token> audio, text;
  std::vector<double> x, q, k, v, u, h1, z, g, h2, attn;

  TrunkCache() = default;
  TrunkCache(const ArchSpec& a, std::size_t capacity) { reset(a, capacity); }

  void reset(const ArchSpec& a, std::size_t capacity) {
    d = a.d_model;
    f = a.ff_width;
    cap = capacity;
    n = 0;
    audio.assign(cap, kPad);
    text.assign(cap, kPad);
    for (auto* buf : {&x, &q, &k, &v, &u, &h1, &h2}) buf->assign(cap * d, 0.0);
    z.assign(cap * f, 0.0);
    g.assign(cap * f, 0.0);
    attn.assign(cap * cap, 0.0);
  }

  const double* hidden(std::size_t p) const { return h2.data() + p * d; }
};

// Computes position cache.n from the tokens at that position and all cached
// earlier positions.
inline void trunk_step(const TrunkParams& P, TrunkCache& c, Token audio, Token text) {
  const std::size_t p = c.n, d = c.d, f = c.f;
  require(p < c.cap && p < P.pos_emb.rows, ErrorKind::ContextOverflow, "sequence exceeds context length");
  c.audio[p] = audio;
  c.text[p] = text;
  double* x = c.x.data() + p * d;
  const double* ea = P.audio_emb.row(static_cast<std::size_t>(audio));
  const double* et = P.text_emb.row(static_cast<std::size_t>(text));
  const double* ep = P.pos_emb.row(p);
  for (std::size_t i = 0; i < d; ++i) x[i] = ea[i] + et[i] + ep[i];

  double* q = c.q.data() + p * d;
  kernel::matvec(P.wq, x, q);
  kernel::matvec(P.wk, x, c.k.data() + p * d);
  kernel::matvec(P.wv, x, c.v.data() + p * d);

  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  double* a = c.attn.data() + p * c.cap;
  double m = -INFINITY;
  for (std::size_t j = 0; j <= p; ++j) {
    a[j] = kernel::dot(q, c.k.data() + j * d, d) * scale;
    m = std::max(m, a[j]);
  }
  double sum = 0.0;
  for (std::size_t j = 0; j <= p; ++j) {
    a[j] = std::exp(a[j] - m);
    sum += a[j];
  }
  double* u = c.u.data() + p * d;
  std::fill(u, u + d, 0.0);
  for (std::size_t j = 0; j <= p; ++j) {
    a[j] /= sum;
    kernel::axpy(a[j], c.v.data() + j * d, u, d);
  }

  double* h1 = c.h1.data() + p * d;
  kernel::matvec(P.wo, u, h1);
  for (std::size_t i = 0; i < d; ++i) h1[i] += x[i];

  double* z = c.z.data() + p * f;
  double* g = c.g.data() + p * f;
  kernel::matvec(P.w1, h1, z);
  for (std::size_t i = 0; i < f; ++i) {
    z[i] += P.b1.data[i];
    g[i] = kernel::gelu(z[i]);
  }
  double* h2 = c.h2.data() + p * d;
  kernel::matvec(P.w2, g, h2);
  for (std::size_t i = 0; i < d; ++i) h2[i] += h1[i] + P.b2.data[i];
  c.n = p + 1;
}

inline void trunk_forward(const TrunkParams& P, TrunkCache& c, std::span<const Token> audio,
                          std::span<const Token> text) {
  for (std::size_t p = 0; p < audio.size(); ++p) trunk_step(P, c, audio[p], text[p]);
}

// Reverse pass over all cached positions. `dh2` holds dL/dh2 (n x d) and is
// consumed; gradients accumulate into `G`.
inline void trunk_backward(const TrunkParams& P, const TrunkCache& c, std::vector<double>& dh2, TrunkParams& G) {
  const std::size_t n = c.n, d = c.d, f = c.f;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> dh1(n * d, 0.0), dq(n * d, 0.0), dk(n * d, 0.0), dv(n * d, 0.0);
  std::vector<double> dz(f), du(d), da(n);

  for (std::size_t p = 0; p < n; ++p) {
    const double* go = dh2.data() + p * d;
    const double* g = c.g.data() + p * f;
    const double* z = c.z.data() + p * f;
    double* dh1p = dh1.data() + p * d;

    kernel::outer_acc(G.w2, go, g);
    kernel::axpy(1.0, go, G.b2.data.data(), d);
    std::fill(dz.begin(), dz.end(), 0.0);
    kernel::matvec_t_acc(P.w2, go, dz.data());
    for (std::size_t i = 0; i < f; ++i) dz[i] *= kernel::gelu_grad(z[i]);
    kernel::outer_acc(G.w1, dz.data(), c.h1.data() + p * d);
    kernel::axpy(1.0, dz.data(), G.b1.data.data(), f);
    std::copy(go, go + d, dh1p);
    kernel::matvec_t_acc(P.w1, dz.data(), dh1p);

    kernel::outer_acc(G.wo, dh1p, c.u.data() + p * d);
    std::fill(du.begin(), du.end(), 0.0);
    kernel::matvec_t_acc(P.wo, dh1p, du.data());

    const double* a = c.attn.data() + p * c.cap;
    double weighted = 0.0;
    for (std::size_t j = 0; j <= p; ++j) {
      da[j] = kernel::dot(du.data(), c.v.data() + j * d, d);
      kernel::axpy(a[j], du.data(), dv.data() + j * d, d);
      weighted += a[j] * da[j];
    }
    double* dqp = dq.data() + p * d;
    const double* qp = c.q.data() + p * d;
    for (std::size_t j = 0; j <= p; ++j) {
      const double ds = a[j] * (da[j] - weighted) * scale;
      if (ds == 0.0) continue;
      kernel::axpy(ds, c.k.data() + j * d, dqp, d);
      kernel::axpy(ds, qp, dk.data() + j * d, d);
    }
  }

  std::vector<double> dx(d);
  for (std::size_t p = 0; p < n; ++p) {
    const double* x = c.x.data() + p * d;
    std::copy(dh1.data() + p * d, dh1.data() + (p + 1) * d, dx.begin());
    kernel::outer_acc(G.wq, dq.data() + p * d, x);
    kernel::outer_acc(G.wk, dk.data() + p * d, x);
    kernel::outer_acc(G.wv, dv.data() + p * d, x);
    kernel::matvec_t_acc(P.wq, dq.data() + p * d, dx.data());
    kernel::matvec_t_acc(P.wk, dk.data() + p * d, dx.data());
    kernel::matvec_t_acc(P.wv, dv.data() + p * d, dx.data());
    kernel::axpy(1.0, dx.data(), G.audio_emb.row(static_cast<std::size_t>(c.audio[p])), d);
    kernel::axpy(1.0, dx.data(), G.text_emb.row(static_cast<std::size_t>(c.text[p])), d);
    kernel::axpy(1.0, dx.data(), G.pos_emb.row(p), d);
  }
}

}  // namespace paralign
