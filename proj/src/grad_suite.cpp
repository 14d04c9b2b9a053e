#include "xfe/grad_suite.hpp"

#include "xfe/ad/binder.hpp"
#include "xfe/ad/ops.hpp"
#include "xfe/hash_encoder.hpp"
#include "xfe/lineformer.hpp"
#include "xfe/renderer.hpp"
#include "xfe/rng.hpp"

namespace xfe {

using ad::Parameter;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = uniform(rng, lo, hi);
  return t;
}

// A random linear functional, so that every output entry reaches the gradient.
Var probe(Tape<double>& t, Var v, std::uint64_t seed) {
  Rng rng(seed);
  return ad::sum(t, ad::mul(t, v, t.constant(random_tensor(t.shape(v), rng))));
}

using Loss = std::function<Var(Tape<double>&)>;

struct Runner {
  std::uint64_t seed;
  double step;
  std::vector<SuiteCase>& out;
  const std::function<void(const SuiteCase&)>& progress;

  void operator()(const std::string& module, const std::string& name, const std::vector<Parameter<double>*>& params,
                  const Loss& loss, std::size_t max_entries = 64) {
    SuiteCase c{module, name, seed, check_gradients(params, loss, step, max_entries, seed)};
    if (progress) progress(c);
    out.push_back(std::move(c));
  }
};

void tensor_cases(Runner& run, Rng& rng) {
  const std::uint64_t s = rng();
  {
    Parameter<double> a("a", random_tensor({3, 4}, rng)), b("b", random_tensor({3, 4}, rng));
    run("tensor_ad", "elementwise", {&a, &b}, [&](Tape<double>& t) {
      Var x = t.parameter(a), y = t.parameter(b);
      Var z = ad::add(t, ad::mul(t, x, y), ad::sub(t, ad::scale(t, x, 0.5), ad::neg(t, y)));
      z = ad::add(t, z, ad::add(t, ad::exp(t, x), ad::square(t, y)));
      z = ad::add(t, z, ad::add(t, ad::softplus(t, x), ad::gelu(t, y)));
      return probe(t, z, s);
    });
  }
  {
    Parameter<double> a("a", random_tensor({4, 3}, rng)), b("b", random_tensor({3, 5}, rng));
    run("tensor_ad", "matmul", {&a, &b},
        [&](Tape<double>& t) { return probe(t, ad::matmul(t, t.parameter(a), t.parameter(b)), s); });
  }
  {
    Parameter<double> x("x", random_tensor({6, 4}, rng)), w("w", random_tensor({4, 3}, rng)),
        bias("bias", random_tensor({3}, rng)), table("table", random_tensor({2, 3}, rng));
    run("tensor_ad", "linear+add_tiled", {&x, &w, &bias, &table}, [&](Tape<double>& t) {
      Var y = ad::linear(t, t.parameter(x), t.parameter(w), t.parameter(bias));
      return probe(t, ad::add_tiled(t, y, t.parameter(table)), s);
    });
  }
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      Parameter<double> a("a", random_tensor(ta ? Shape{2, 3, 4} : Shape{2, 4, 3}, rng));
      Parameter<double> b("b", random_tensor(tb ? Shape{2, 5, 3} : Shape{2, 3, 5}, rng));
      run("tensor_ad", "batched_matmul t" + std::to_string(ta) + std::to_string(tb), {&a, &b}, [&](Tape<double>& t) {
        return probe(t, ad::batched_matmul(t, t.parameter(a), t.parameter(b), ta != 0, tb != 0), s);
      });
    }
  for (std::size_t axis : {0u, 1u}) {
    Parameter<double> x("x", random_tensor({3, 5}, rng, -2.0, 2.0));
    run("tensor_ad", "softmax axis " + std::to_string(axis), {&x},
        [&](Tape<double>& t) { return probe(t, ad::softmax(t, t.parameter(x), axis), s); });
  }
  {
    Parameter<double> x("x", random_tensor({4, 6}, rng)), g("g", random_tensor({6}, rng)),
        b("b", random_tensor({6}, rng));
    run("tensor_ad", "layer_norm", {&x, &g, &b}, [&](Tape<double>& t) {
      return probe(t, ad::layer_norm(t, t.parameter(x), t.parameter(g), t.parameter(b)), s);
    });
  }
  {
    Parameter<double> a("a", random_tensor({3, 4}, rng)), b("b", random_tensor({3, 2}, rng));
    run("tensor_ad", "concat/slice/reshape/reductions", {&a, &b}, [&](Tape<double>& t) {
      Var c = ad::concat_cols(t, t.parameter(a), t.parameter(b));
      Var s0 = ad::slice(t, c, 0, 1, 3);
      Var flat = ad::reshape(t, ad::slice(t, c, 1, 2, 5), Shape{9});
      Var r = ad::add(t, probe(t, s0, s), probe(t, flat, s + 1));
      r = ad::add(t, r, probe(t, ad::sum_cols(t, c), s + 2));
      return ad::add(t, r, ad::mean(t, ad::square(t, c)));
    });
  }
  {
    Parameter<double> x("x", random_tensor({4, 6}, rng)), alpha("alpha", random_tensor({3}, rng, 0.5, 2.0));
    run("tensor_ad", "split/divide/merge heads", {&x, &alpha}, [&](Tape<double>& t) {
      Var h = ad::split_heads(t, t.parameter(x), 2, 3);
      return probe(t, ad::merge_heads(t, ad::divide_by_group(t, h, t.parameter(alpha), 1.5), 3), s);
    });
  }
  {
    Parameter<double> q("q", random_tensor({8, 6}, rng)), k("k", random_tensor({8, 6}, rng)),
        v("v", random_tensor({8, 6}, rng)), alpha("alpha", random_tensor({2}, rng, 0.5, 2.0));
    run("tensor_ad", "segment_attention", {&q, &k, &v, &alpha}, [&](Tape<double>& t) {
      return probe(t,
                   ad::segment_attention(t, t.parameter(q), t.parameter(k), t.parameter(v), t.parameter(alpha), 4, 2),
                   s);
    });
  }
}

void encoder_cases(Runner& run, Rng& rng) {
  encoding::HashGridConfig cfg;
  cfg.levels = 3;
  cfg.features = 2;
  cfg.log2_table = 6;
  cfg.base_resolution = 2;
  cfg.growth = 2.0;
  encoding::HashGridParams<double> p(cfg, rng);
  for (auto& v : p.table.value.storage()) v = uniform(rng, -1.0, 1.0);
  std::vector<geometry::Vec3> pts;
  for (int i = 0; i < 16; ++i) pts.emplace_back(uniform01(rng), uniform01(rng), uniform01(rng));
  const std::uint64_t s = rng();
  run("hash_encoder", "encode", {&p.table}, [&](Tape<double>& t) {
    return probe(t, ad::square(t, encoding::encode(t, p, t.parameter(p.table), pts)), s);
  }, 256);
}

void lineformer_cases(Runner& run, Rng& rng) {
  model::LineformerConfig cfg;
  cfg.channels = 8;
  cfg.heads = 2;
  cfg.segment = 2;
  cfg.points = 4;
  for (model::Mixer m : {model::Mixer::ls_msa, model::Mixer::g_msa, model::Mixer::mlp}) {
    cfg.mixer = m;
    model::LSABParams<double> p("blk", cfg, rng);
    Parameter<double> x("x", random_tensor({8, 8}, rng));
    auto params = p.parameters(m);
    params.push_back(&x);
    const std::uint64_t s = rng();
    run("lineformer", "lsab " + std::string(model::to_string(m)), params, [&](Tape<double>& t) {
      ad::Binder<double> b(t);
      return probe(t, model::lsab_forward(b, p, cfg, b(x)), s);
    }, 16);
  }
  cfg.mixer = model::Mixer::ls_msa;
  model::LineformerParams<double> net(cfg, rng);
  Parameter<double> x("features", random_tensor({8, 8}, rng));
  auto params = net.parameters();
  params.push_back(&x);
  const std::uint64_t s = rng();
  run("lineformer", "forward", params, [&](Tape<double>& t) {
    ad::Binder<double> b(t);
    return probe(t, model::forward(b, net, b(x)), s);
  }, 8);
}

void renderer_cases(Runner& run, Rng& rng) {
  Parameter<double> rho("rho", random_tensor({24}, rng, 0.0, 0.3));
  std::vector<double> delta(24);
  for (auto& d : delta) d = uniform(rng, 0.5, 2.0);
  std::vector<double> gt(3);
  for (auto& g : gt) g = uniform(rng, 0.1, 0.9);
  for (auto red : {rendering::Reduction::mean, rendering::Reduction::sum}) {
    run("renderer", std::string("render+loss ") + (red == rendering::Reduction::mean ? "mean" : "sum"), {&rho},
        [&](Tape<double>& t) {
          return rendering::loss<double>(t, rendering::render<double>(t, t.parameter(rho), delta, 8), gt, red);
        });
  }
  run("renderer", "render+loss log", {&rho}, [&](Tape<double>& t) {
    Var absorption;
    rendering::render<double>(t, t.parameter(rho), delta, 8, 1.0, &absorption);
    return rendering::loss<double>(t, absorption, gt, rendering::Reduction::mean, rendering::LossDomain::log);
  });
}

}  // namespace

std::vector<SuiteCase> run_gradient_suite(std::size_t seeds, std::uint64_t first_seed, double step,
                                          const std::function<void(const SuiteCase&)>& progress) {
  std::vector<SuiteCase> out;
  for (std::uint64_t seed = first_seed; seed < first_seed + seeds; ++seed) {
    Rng rng(seed);
    Runner run{seed, step, out, progress};
    tensor_cases(run, rng);
    encoder_cases(run, rng);
    lineformer_cases(run, rng);
    renderer_cases(run, rng);
  }
  return out;
}

}  // namespace xfe
