#include <cmath>
#include <vector>

#include "cogen/error.hpp"
#include "cogen/gradcheck.hpp"
#include "cogen/transformer.hpp"
#include "doctest.h"

using namespace cogen;
using Td = Tensor<double>;
using Mat = std::vector<std::vector<double>>;

namespace {

TransformerConfig small_config() {
  TransformerConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_model = 8;
  cfg.d_ff = 12;
  cfg.max_seq_len = 16;
  return cfg;
}

Td random_rows(std::size_t n, std::size_t d, Rng& rng) {
  std::vector<double> v(n * d);
  for (auto& x : v) x = rng.normal();
  return Td::from({n, d}, std::move(v));
}

// Plain-loop reference implementation of one block, independent of the op library.
Mat to_mat(const Td& t) {
  Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.data()[i * t.dim(1) + j];
  return m;
}

Mat ref_linear(const Mat& x, const ParameterSet<double>& p, const std::string& name) {
  const Td& w = p.get(name + ".weight");
  const Td& b = p.get(name + ".bias");
  const std::size_t in = w.dim(0), out = w.dim(1);
  Mat y(x.size(), std::vector<double>(out));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t o = 0; o < out; ++o) {
      double s = b.data()[o];
      for (std::size_t k = 0; k < in; ++k) s += x[i][k] * w.data()[k * out + o];
      y[i][o] = s;
    }
  return y;
}

Mat ref_norm(const Mat& x, const ParameterSet<double>& p, const std::string& name) {
  const Td& g = p.get(name + ".gain");
  const Td& b = p.get(name + ".bias");
  Mat y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double mu = 0, var = 0;
    for (double v : x[i]) mu += v;
    mu /= x[i].size();
    for (double v : x[i]) var += (v - mu) * (v - mu);
    var /= x[i].size();
    for (std::size_t j = 0; j < x[i].size(); ++j)
      y[i][j] = (x[i][j] - mu) / std::sqrt(var + kLayerNormEps) * g.data()[j] + b.data()[j];
  }
  return y;
}

Mat ref_attention(const Mat& q, const Mat& k, const Mat& v, const AttentionMask& mask, std::size_t heads) {
  const std::size_t d = q[0].size(), dh = d / heads;
  Mat out(q.size(), std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < q.size(); ++i) {
      std::vector<double> s(k.size());
      double mx = -1e300;
      for (std::size_t j = 0; j < k.size(); ++j) {
        if (!mask.allowed(i, j)) {
          s[j] = -1e300;
          continue;
        }
        double dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += q[i][h * dh + c] * k[j][h * dh + c];
        s[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (std::size_t j = 0; j < k.size(); ++j) {
        s[j] = mask.allowed(i, j) ? std::exp(s[j] - mx) : 0.0;
        z += s[j];
      }
      for (std::size_t j = 0; j < k.size(); ++j)
        for (std::size_t c = 0; c < dh; ++c) out[i][h * dh + c] += s[j] / z * v[j][h * dh + c];
    }
  return out;
}

Mat ref_add(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

Mat ref_block(const Mat& x, const Mat* memory, const AttentionMask& mask, const ParameterSet<double>& p,
              const std::string& pre, std::size_t heads) {
  Mat xn = ref_norm(x, p, pre + ".norm_attn");
  const Mat& src = memory ? *memory : xn;
  Mat att = ref_attention(ref_linear(xn, p, pre + ".query"), ref_linear(src, p, pre + ".key"),
                          ref_linear(src, p, pre + ".value"), mask, heads);
  Mat a = ref_add(x, ref_linear(att, p, pre + ".out"));
  Mat f = ref_linear(ref_norm(a, p, pre + ".norm_ffn"), p, pre + ".ff_in");
  for (auto& r : f)
    for (auto& v : r) v = std::max(0.0, v);
  return ref_add(a, ref_linear(f, p, pre + ".ff_out"));
}

void check_close(const Td& got, const Mat& want, double tol) {
  REQUIRE(got.dim(0) == want.size());
  for (std::size_t i = 0; i < want.size(); ++i)
    for (std::size_t j = 0; j < want[i].size(); ++j)
      CHECK(got.at(i, j) == doctest::Approx(want[i][j]).epsilon(tol));
}

}  // namespace

TEST_CASE("transformer config validation") {
  TransformerConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.ff_width() == 512);
  cfg.n_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TransformerConfig{};
  cfg.n_layers = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TransformerConfig{};
  cfg.dropout = 0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("blocks match a plain-loop reference") {
  const auto cfg = small_config();
  Rng rng(3);
  ParameterSet<double> p;
  TransformerBlock<double> self_block(p, "s", cfg, rng, true);
  TransformerBlock<double> cross_block(p, "c", cfg, rng, false);
  // Perturb the norms so gains and biases are exercised.
  for (const auto& e : p.entries()) {
    if (e.name.find("norm") == std::string::npos) continue;
    auto& d = e.tensor.node()->data;
    for (auto& v : d) v += 0.1 * rng.normal();
  }
  Td x = random_rows(5, 8, rng);
  Td mem = random_rows(3, 8, rng);

  const auto causal = AttentionMask::causal(5);
  check_close(self_block.forward_self(x, causal, nullptr), ref_block(to_mat(x), nullptr, causal, p, "s", 2), 1e-10);

  const std::vector<std::uint8_t> keys{1, 0, 1};
  const auto mask = AttentionMask::from_keys(5, keys);
  Mat m = to_mat(mem);
  check_close(cross_block.forward_cross(x, cross_block.project_memory(mem), mask, nullptr),
              ref_block(to_mat(x), &m, mask, p, "c", 2), 1e-10);

  CHECK_THROWS_AS(self_block.forward_cross(x, cross_block.project_memory(mem), mask, nullptr), ContractError);
}

TEST_CASE("stack ends in a layer norm and records one trace per layer") {
  const auto cfg = small_config();
  Rng rng(4);
  ParameterSet<double> p;
  BlockStack<double> stack(p, "enc", cfg, rng, true);
  Td x = random_rows(4, 8, rng);
  AttentionTrace trace;
  Td y = stack.forward_self(x, AttentionMask::all(4, 4), &trace);
  REQUIRE(trace.layers.size() == 2);
  CHECK(trace.heads == 2);
  CHECK(trace.queries == 4);
  CHECK(trace.keys == 4);
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t q = 0; q < 4; ++q) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += trace.weight(l, h, q, k);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
      }
  for (std::size_t i = 0; i < 4; ++i) {
    double mu = 0;
    for (std::size_t j = 0; j < 8; ++j) mu += y.at(i, j);
    CHECK(mu / 8 == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("encoder outputs at kept positions ignore masked tokens") {
  const auto cfg = small_config();
  Rng rng(5);
  ParameterSet<double> p;
  Td table = p.add("embed", random_rows(20, 8, rng));
  Encoder<double> enc(p, "encoder", cfg, rng);
  const std::vector<int> a{4, 5, 6, 0, 0};
  const std::vector<int> b{4, 5, 6, 17, 9};
  const std::vector<std::uint8_t> mask{1, 1, 1, 0, 0};
  auto ea = enc.encode(table, a, mask);
  auto eb = enc.encode(table, b, mask);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 8; ++j) CHECK(ea.hidden.at(i, j) == doctest::Approx(eb.hidden.at(i, j)).epsilon(1e-12));
  CHECK(ea.truncated == 0);

  // Changing a kept token does change kept outputs.
  const std::vector<int> c{4, 5, 7, 0, 0};
  auto ec = enc.encode(table, c, mask);
  CHECK(std::abs(ec.hidden.at(0, 0) - ea.hidden.at(0, 0)) > 1e-9);
}

TEST_CASE("encoder truncates the oldest tokens") {
  auto cfg = small_config();
  cfg.max_seq_len = 4;
  Rng rng(6);
  ParameterSet<double> p;
  Td table = p.add("embed", random_rows(20, 8, rng));
  Encoder<double> enc(p, "encoder", cfg, rng);
  const std::vector<int> long_ids{1, 2, 3, 4, 5, 6};
  const std::vector<std::uint8_t> ones(6, 1);
  auto out = enc.encode(table, long_ids, ones);
  CHECK(out.truncated == 2);
  CHECK(out.hidden.dim(0) == 4);
  const std::vector<int> tail{3, 4, 5, 6};
  auto ref = enc.encode(table, tail, std::span<const std::uint8_t>(ones).first(4));
  for (std::size_t i = 0; i < 4 * 8; ++i) CHECK(out.hidden.data()[i] == ref.hidden.data()[i]);
  CHECK_THROWS_AS(enc.encode(table, tail, ones), DimensionError);
}

TEST_CASE("decoder is causal and incremental decoding matches the batch pass") {
  const auto cfg = small_config();
  Rng rng(7);
  ParameterSet<double> p;
  Td table = p.add("embed", random_rows(20, 8, rng));
  Encoder<double> enc(p, "encoder", cfg, rng);
  Decoder<double> dec(p, "decoder", cfg, rng);
  const std::vector<int> src{3, 8, 9, 11};
  const std::vector<std::uint8_t> src_mask{1, 1, 1, 0};
  auto e = enc.encode(table, src, src_mask);

  const std::vector<int> tgt{1, 6, 7, 12, 2};
  const std::vector<int> tgt2{1, 6, 7, 15, 19};
  auto full = dec.forward(embed_tokens(table, tgt), e);
  auto alt = dec.forward(embed_tokens(table, tgt2), e);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(full.h.at(i, j) == alt.h.at(i, j));
      CHECK(full.c.at(i, j) == alt.c.at(i, j));
    }

  auto state = dec.start(e);
  for (std::size_t t = 0; t < tgt.size(); ++t) {
    auto out = dec.step(embed_tokens(table, std::span<const int>(tgt).subspan(t, 1), t), state);
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(out.h.at(0, j) == doctest::Approx(full.h.at(t, j)).epsilon(1e-10));
      CHECK(out.c.at(0, j) == doctest::Approx(full.c.at(t, j)).epsilon(1e-10));
    }
  }
  CHECK(state.position == tgt.size());
  CHECK_THROWS_AS(dec.step(embed_tokens(table, tgt), state), ContractError);
}

TEST_CASE("output projection checks widths") {
  Rng rng(8);
  Td f = random_rows(3, 4, rng);
  CHECK(output_projection(f, random_rows(4, 6, rng)).shape() == Shape{3, 6});
  CHECK_THROWS_AS(output_projection(f, random_rows(5, 6, rng)), DimensionError);
}

TEST_CASE("positional encodings are sinusoids") {
  Td pe = positional_encoding<double>(0, 3, 4);
  CHECK(pe.at(0, 0) == 0.0);
  CHECK(pe.at(0, 1) == 1.0);
  CHECK(pe.at(2, 0) == doctest::Approx(std::sin(2.0)).epsilon(1e-15));
  CHECK(pe.at(2, 3) == doctest::Approx(std::cos(2.0 / 100.0)).epsilon(1e-15));
}

TEST_CASE("encoder and decoder parameter gradients pass finite differences") {
  const auto cfg = small_config();
  Rng rng(9);
  ParameterSet<double> p;
  Td table = p.add("embed", random_rows(12, 8, rng));
  Encoder<double> enc(p, "encoder", cfg, rng);
  Decoder<double> dec(p, "decoder", cfg, rng);
  Td proj = p.add("proj", random_rows(16, 12, rng));
  const std::vector<int> src{3, 8, 9, 5};
  const std::vector<std::uint8_t> src_mask{1, 1, 1, 0};
  const std::vector<int> tgt{1, 6, 7};
  const std::vector<int> next{6, 7, 2};
  auto loss = [&] {
    auto e = enc.encode(table, src, src_mask);
    auto o = dec.forward(embed_tokens(table, tgt), e);
    return cross_entropy(output_projection(concat_cols(std::vector<Td>{o.h, o.c}), proj), next, -1);
  };
  CHECK(gradcheck_parameters(loss, p.with_prefix("encoder.")) < 1e-4);
  CHECK(gradcheck_parameters(loss, p.with_prefix("decoder.")) < 1e-4);
  CHECK(gradcheck_parameters(loss, std::vector<Td>{table, proj}) < 1e-4);
}
