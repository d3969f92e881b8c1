#include <doctest.h>

#include "zslada/ada/ada.hpp"
#include "zslada/nn/grad_check.hpp"
#include "zslada/rng.hpp"
#include "test_util.hpp"
#include "toy_models.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>

using namespace zslada;
using namespace zslada::ada;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> r) {
  Matrix m(static_cast<Index>(r.size()), static_cast<Index>(r.begin()->size()));
  Index i = 0;
  for (const auto& row : r) {
    Index j = 0;
    for (double v : row) m(i, j++) = static_cast<Real>(v);
    ++i;
  }
  return m;
}

Matrix random_rows(Index n, Index d, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Matrix m(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) m(i, j) = static_cast<Real>(scale * rng.normal());
  return m;
}

BatchPair pair(Matrix y, std::vector<int> ly, Matrix x, std::vector<int> lx) {
  BatchPair b;
  b.source = {std::move(y), std::move(ly), BatchOrigin::source};
  b.target = {std::move(x), std::move(lx), BatchOrigin::target};
  return b;
}

// D(v) = w . v + b
nn::MlpNetwork linear_critic(const Vector& w, double b) {
  nn::MlpNetwork net(nn::make_spec(w.size(), {}, 1, nn::Activation::identity, nn::Activation::identity), 0);
  Vector p(w.size() + 1);
  p.head(w.size()) = w;
  p[w.size()] = static_cast<Real>(b);
  net.set_params(p);
  net.set_mode(nn::Mode::eval);
  return net;
}

nn::MlpNetwork offset_generator(const Vector& offset, int U) {
  nn::MlpNetwork g = identity_generator(offset.size(), U);
  Vector p = g.params();
  p.tail(offset.size()) = offset;
  g.set_params(p);
  return g;
}

// Linear classifier with logits scale * x.
nn::MlpNetwork scaled_classifier(Index d, double scale) {
  nn::MlpNetwork net(nn::make_spec(d, {}, d, nn::Activation::identity, nn::Activation::log_softmax), 0);
  Vector p = Vector::Zero(net.params().size());
  for (Index i = 0; i < d; ++i) p[i * d + i] = static_cast<Real>(scale);
  net.set_params(p);
  net.set_mode(nn::Mode::eval);
  return net;
}

Vector vec2(double a, double b) {
  Vector v(2);
  v << static_cast<Real>(a), static_cast<Real>(b);
  return v;
}

struct ToyWorld {
  model::BaseZslModel base;
  data::FeatureDataset test;
};

// Two seen and three unseen classes in d=4; unseen test rows are translated along feature 0.
ToyWorld toy_world(double shift, Index per_class = 60) {
  using test::params;
  std::vector<model::GaussianClassParams> cls = {
      params(0, {-8, 0, 0, 0}, {1, 1, 1, 1}), params(1, {8, 0, 0, 0}, {1, 1, 1, 1}),
      params(2, {0, 6, 0, 0}, {1, 1, 1, 1}), params(3, {0, -6, 0, 0}, {1.2, 1, 1, 1}),
      params(4, {0, 0, 6, 0}, {1, 1, 0.8, 1})};
  ToyWorld w{test::model_with(cls, {true, true, false, false, false}), {}};
  w.test.split.seen = {0, 1};
  w.test.split.unseen = {2, 3, 4};
  w.test.features.resize(3 * per_class, 4);
  for (int k = 0; k < 3; ++k) {
    Matrix draws = model::sample_gaussian(cls[static_cast<std::size_t>(k + 2)], per_class, 50 + k);
    draws.col(0).array() += static_cast<Real>(shift);
    w.test.features.middleRows(k * per_class, per_class) = draws;
    for (Index i = 0; i < per_class; ++i) w.test.labels.push_back(k + 2);
  }
  return w;
}

AdaConfig tiny_config(Variant v = Variant::full) {
  AdaConfig c = ada_preset("synth-small");
  c.nets.generator_hidden = {8};
  c.nets.critic_hidden = {8};
  c.n_steps = 40;
  c.batch_size = 16;
  c.n_d = 2;
  c.recovery_trigger.check_every = 10;
  c.variant = v;
  return c;
}

}  // namespace

TEST_CASE("augment_label appends a one-hot code") {
  const Vector a = augment_label(vec2(1, 2), 1, 3);
  REQUIRE(a.size() == 5);
  CHECK(a[0] == 1);
  CHECK(a[1] == 2);
  CHECK(a[2] == 0);
  CHECK(a[3] == 1);
  CHECK(a[4] == 0);

  const Vector single = augment_label(vec2(1, 2), 0, 1);
  REQUIRE(single.size() == 3);
  CHECK(single[2] == 1);

  const Matrix m = augment_labels(random_rows(5, 7, 1), {0, 1, 2, 3, 3}, 4);
  CHECK(m.cols() == 11);
  CHECK(m.rightCols(4).rowwise().sum().isOnes());

  try {
    augment_label(vec2(1, 2), 3, 3);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::label_out_of_range);
  }
  CHECK_THROWS_AS(augment_label(vec2(1, 2), -1, 3), Error);
}

TEST_CASE("generator loss examples") {
  const Matrix x = random_rows(6, 2, 3);
  const Matrix y = random_rows(6, 2, 4);
  const std::vector<int> l = {0, 1, 0, 1, 1, 0};
  const BatchPair b = pair(y, l, x, l);
  const auto g = identity_generator(2, 2);

  CHECK(generator_loss_t(g, linear_critic(Vector::Zero(2), 0.0), b, 5.0) == doctest::Approx(0.0));
  CHECK(generator_loss_t(g, linear_critic(Vector::Zero(2), 2.5), b, 0.0) == doctest::Approx(-2.5));
  CHECK(generator_loss_s(g, linear_critic(Vector::Zero(2), 2.5), b, 0.0) == doctest::Approx(-2.5));

  const BatchPair zeros = pair(Matrix::Zero(1, 2), {0}, Matrix::Zero(1, 2), {0});
  const auto shifted = offset_generator(vec2(1, 0), 1);
  CHECK(generator_loss_t(shifted, linear_critic(Vector::Zero(2), 0.0), zeros, 5.0) == doctest::Approx(5.0));

  BatchPair empty = pair(Matrix(0, 2), {}, x, l);
  try {
    generator_loss_t(g, linear_critic(Vector::Zero(2), 0.0), empty, 5.0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::empty_batch);
  }
}

TEST_CASE("critic loss examples") {
  const auto g = identity_generator(2, 1);
  const std::vector<int> l = {0, 0, 0};
  const BatchPair b = pair(rows({{1, 7}, {1, -2}, {1, 0}}), l, rows({{3, 1}, {3, 5}, {3, 2}}), l);
  CHECK(critic_loss_t(linear_critic(Vector::Zero(2), 4.0), g, b) == doctest::Approx(0.0));
  // Fakes score 1, reals score 3.
  CHECK(critic_loss_t(linear_critic(vec2(1, 0), 0.0), g, b) == doctest::Approx(-2.0));
  // S side: fakes G_S(x) score 3, reals y score 1.
  CHECK(critic_loss_s(linear_critic(vec2(1, 0), 0.0), g, b) == doctest::Approx(2.0));
}

TEST_CASE("cycle loss examples") {
  const auto id = identity_generator(3, 2);
  const Matrix x = random_rows(5, 3, 9);
  const std::vector<int> l = {0, 1, 1, 0, 1};
  CHECK(cycle_loss(id, id, pair(x, l, x, l)) == 0.0);
  CHECK(cycle_loss(id, id, pair(x, l, x, l), CycleForm::within_domain) == 0.0);

  // With identity generators the cross form is E|y - x| + E|x - y|.
  const Matrix y = random_rows(5, 3, 10);
  const double l1 = (y - x).cwiseAbs().sum() / 5.0;
  CHECK(cycle_loss(id, id, pair(y, l, x, l)) == doctest::Approx(2.0 * l1));

  Vector plus(1), minus(1);
  plus << 1;
  minus << -1;
  const auto g_t = offset_generator(plus, 1);
  const auto g_s = offset_generator(minus, 1);
  const BatchPair scalar = pair(rows({{0}}), {0}, rows({{1}}), {0});
  CHECK(cycle_loss(g_t, g_s, scalar, CycleForm::within_domain) == doctest::Approx(0.0));
  CHECK(cycle_loss(g_t, g_s, scalar, CycleForm::cross_domain) == doctest::Approx(2.0));

  NetSet nets;
  nets.g_t = &id;
  nets.g_s = &id;
  LossOptions o;
  o.num_classes = 2;
  CHECK_THROWS_AS(evaluate_losses(nets, pair(y.topRows(4), {0, 1, 1, 0}, x, l), o), Error);
}

TEST_CASE("classifier loss examples") {
  const std::vector<int> l = {0, 1, 2, 3, 2};
  Matrix onehot = Matrix::Zero(5, 4);
  for (Index i = 0; i < 5; ++i) onehot(i, l[static_cast<std::size_t>(i)]) = 1;
  const BatchPair b = pair(onehot, l, onehot, l);

  const auto perfect = scaled_classifier(4, 200.0);
  CHECK(classifier_loss_t(perfect, nullptr, b, Phase::recovery) == doctest::Approx(0.0).epsilon(1e-12));

  const auto uniform = scaled_classifier(4, 0.0);
  CHECK(classifier_loss_t(uniform, nullptr, b, Phase::warmup) == doctest::Approx(std::log(4.0)));
  CHECK(classifier_loss_t(uniform, nullptr, b, Phase::recovery) == doctest::Approx(2 * std::log(4.0)));
  CHECK(classifier_loss_s(uniform, nullptr, b, Phase::warmup) == doctest::Approx(std::log(4.0)));

  // Warmup ignores G_T; recovery does not.
  const auto c = scaled_classifier(4, 1.0);
  const auto g1 = identity_generator(4, 4);
  Vector off = Vector::Zero(4);
  off[0] = 3;
  const auto g2 = offset_generator(off, 4);
  CHECK(classifier_loss_t(c, &g1, b, Phase::warmup) == classifier_loss_t(c, &g2, b, Phase::warmup));
  CHECK(classifier_loss_t(c, &g1, b, Phase::recovery) != classifier_loss_t(c, &g2, b, Phase::recovery));

  BatchPair bad = b;
  bad.target.labels[0] = 7;
  try {
    classifier_loss_t(uniform, nullptr, bad, Phase::warmup);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::label_out_of_range);
  }
}

TEST_CASE("total loss bookkeeping") {
  AdaConfig cfg;
  LossTerms only_cycle;
  only_cycle.cycle = 1.0;
  CHECK(LossWeights::total(cfg).combine(only_cycle) == doctest::Approx(10.0));
  CHECK(LossWeights::total(cfg).combine(LossTerms{}) == 0.0);

  // Identity generators, zero critics and confident classifiers, y == x: every term vanishes.
  const std::vector<int> l = {0, 1, 1};
  Matrix onehot = Matrix::Zero(3, 2);
  for (Index i = 0; i < 3; ++i) onehot(i, l[static_cast<std::size_t>(i)]) = 1;
  const auto g = identity_generator(2, 2);
  const auto d = linear_critic(Vector::Zero(2), 0.0);
  const auto c = scaled_classifier(2, 200.0);
  cfg.nets.generator_residual = false;
  NetSet zero{&g, &g, &d, &d, &c, &c};
  const auto z = total_loss(zero, pair(onehot, l, onehot, l), cfg, Phase::recovery);
  CHECK(std::abs(z.total) < 1e-12);

  AdaState s = AdaState::initialize(tiny_config(), 3, {5, 6}, 0);
  s.set_mode(nn::Mode::eval);
  const BatchPair b = pair(random_rows(8, 3, 1), {0, 1, 0, 1, 1, 1, 0, 0}, random_rows(8, 3, 2), {1, 1, 0, 0, 1, 0, 1, 0});
  const auto t = total_loss(s.nets(), b, s.config, Phase::recovery);
  const double sum = t.terms.adv_t() + t.terms.adv_s() + s.config.chi * t.terms.cycle +
                     s.config.xi * (t.terms.clf_t + t.terms.clf_s);
  CHECK(std::abs(t.total - sum) < 1e-12);
  CHECK(t.terms.finite());
}

TEST_CASE("composite loss gradients match finite differences") {
  AdaConfig cfg = tiny_config();
  cfg.nets.generator_hidden = {6};
  cfg.nets.critic_hidden = {5};
  cfg.nets.generator_batchnorm = true;
  cfg.nets.critic_batchnorm = true;
  cfg.nets.generator_dropout = 0.2;
  cfg.mismatch_term = true;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    cfg.seed = seed;
    AdaState s = AdaState::initialize(cfg, 3, {0, 1}, 0);
    s.set_mode(nn::Mode::train);
    const BatchPair b =
        pair(random_rows(6, 3, seed + 10), {0, 1, 1, 0, 1, 0}, random_rows(6, 3, seed + 20, 2.0), {1, 1, 0, 0, 1, 0});
    LossOptions o;
    o.beta = cfg.beta;
    o.phase = seed % 2 ? Phase::recovery : Phase::warmup;
    o.residual = seed < 2;
    o.cycle_form = seed == 3 ? CycleForm::within_domain : CycleForm::cross_domain;
    o.mismatch_term = true;
    o.num_classes = 2;
    o.dropout_seed = 77 + seed;

    struct Case {
      const char* name;
      std::optional<nn::MlpNetwork>* net;
      LossWeights w;
      Vector NetGradients::*grad;
    };
    const Case cases[] = {
        {"g_t", &s.g_t, LossWeights::generator_step(cfg), &NetGradients::g_t},
        {"g_s", &s.g_s, LossWeights::generator_step(cfg), &NetGradients::g_s},
        {"d_t", &s.d_t, LossWeights::critic_step(cfg), &NetGradients::d_t},
        {"d_s", &s.d_s, LossWeights::critic_step(cfg), &NetGradients::d_s},
        {"c_t", &s.c_t, LossWeights{0, 0, 0, 0, 0, 1, 1}, &NetGradients::c_t},
        {"c_s", &s.c_s, LossWeights{0, 0, 0, 0, 0, 1, 1}, &NetGradients::c_s},
    };
    for (const auto& k : cases) {
      CAPTURE(seed);
      CAPTURE(k.name);
      nn::MlpNetwork& net = **k.net;
      const Vector theta0 = net.params();
      auto f = [&](const Vector& th) {
        net.set_params(th);
        return k.w.combine(evaluate_losses(s.nets(), b, o).terms);
      };
      auto g = [&](const Vector& th) {
        net.set_params(th);
        return Vector(evaluate_losses(s.nets(), b, o, &k.w).grads.*k.grad);
      };
      const auto report = nn::grad_check(f, g, theta0, 1e-3);
      CHECK(report.passed);
      CHECK(report.max_relative_error < 1e-3);
      net.set_params(theta0);
    }
  }
}

TEST_CASE("config json round trip and key errors") {
  AdaConfig c = ada_preset("synth-small");
  c.cycle_form = CycleForm::within_domain;
  c.variant = Variant::vanilla_ada;
  c.recovery_trigger.kind = TriggerKind::fixed_fraction;
  nlohmann::json j = c;
  AdaConfig back;
  update_from_json(j, back);
  CHECK(nlohmann::json(back) == j);

  auto message_of = [](const nlohmann::json& bad) {
    AdaConfig x;
    try {
      update_from_json(bad, x);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::invalid_config);
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message_of({{"chii", 1.0}}).find("chii") != std::string::npos);
  CHECK(message_of({{"nets", {{"width", 3}}}}).find("nets.width") != std::string::npos);
  CHECK(message_of({{"n_d", "five"}}).find("n_d") != std::string::npos);
  CHECK(message_of({{"n_d", 0}}).find("n_d") != std::string::npos);
  CHECK(message_of({{"clip_c", 0.0}}).find("clip_c") != std::string::npos);
  CHECK(message_of({{"chi", -1.0}}).find("chi") != std::string::npos);
  CHECK(message_of({{"recovery_trigger", {{"kind", "sometimes"}}}}).find("recovery_trigger.kind") !=
        std::string::npos);

  CHECK(variant_from_string("std-da") == Variant::std_da);
  CHECK(variant_from_string("cyclegan_wo") == Variant::cyclegan_wo);
  CHECK_THROWS_AS(variant_from_string("cyclegan"), Error);
  CHECK_THROWS_AS(ada_preset("huge"), Error);

  const AdaConfig bench = ada_preset("benchmark");
  CHECK(bench.chi == 10.0);
  CHECK(bench.beta == 5.0);
  CHECK(bench.xi == 1e-4);
  CHECK(bench.clip_c == 0.01);
  CHECK(bench.seed == 100);
  CHECK(bench.nets.generator_hidden == std::vector<Index>{1200, 1200});
  CHECK(bench.nets.critic_hidden == std::vector<Index>{1600});
}

TEST_CASE("networks follow the variant") {
  const auto has = [](Variant v) {
    const AdaState s = AdaState::initialize(tiny_config(v), 4, {2, 3, 4}, 0);
    return std::vector<bool>{bool(s.g_t), bool(s.g_s), bool(s.d_t), bool(s.d_s), bool(s.c_t), bool(s.c_s)};
  };
  CHECK(has(Variant::full) == std::vector<bool>{true, true, true, true, true, true});
  CHECK(has(Variant::vanilla_ada) == std::vector<bool>{true, false, true, false, true, false});
  CHECK(has(Variant::cyclegan_wo) == std::vector<bool>{true, true, true, true, false, false});
  CHECK(has(Variant::std_da) == std::vector<bool>{false, false, false, false, true, false});

  const AdaState s = AdaState::initialize(tiny_config(), 4, {2, 3, 4}, 0);
  CHECK(s.g_t->input_width() == 7);
  CHECK(s.g_t->output_width() == 4);
  CHECK(s.d_t->output_width() == 1);
  CHECK(s.d_t->spec().layers.back().activation == nn::Activation::identity);
  CHECK(s.c_t->output_width() == 3);
  CHECK(s.c_t->spec().layers.back().activation == nn::Activation::log_softmax);
  CHECK(s.d_t->max_abs_param() <= s.config.clip_c);
  CHECK_THROWS_AS(s.classify(Matrix::Zero(2, 4)), Error);
}

TEST_CASE("adapt leaves the base model untouched and is deterministic") {
  const ToyWorld w = toy_world(2.0);
  const std::uint64_t before = w.base.fingerprint();
  const Vector mean_params = w.base.mean_net().params();
  AdaConfig cfg = tiny_config();
  cfg.clip_c = 0.05;

  const AdaptResult a = adapt(w.base, w.test, cfg);
  CHECK(w.base.fingerprint() == before);
  CHECK(w.base.mean_net().params() == mean_params);
  CHECK(a.state.base_fingerprint == before);

  REQUIRE(a.log.size() == 40);
  bool seen_recovery = false;
  for (const auto& r : a.log) {
    CHECK(r.terms.finite());
    if (r.phase == Phase::recovery) seen_recovery = true;
    if (seen_recovery) CHECK(r.phase == Phase::recovery);
  }
  CHECK(seen_recovery);
  CHECK(a.state.iteration == 40);
  CHECK(a.state.d_t->max_abs_param() <= 0.05);
  CHECK(a.state.d_s->max_abs_param() <= 0.05);

  const AdaptResult b = adapt(w.base, w.test, cfg);
  CHECK(a.state.g_t->params() == b.state.g_t->params());
  CHECK(a.state.c_t->params() == b.state.c_t->params());
  CHECK(a.state.classify(w.test.features) == b.state.classify(w.test.features));
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].terms.cycle == b.log[i].terms.cycle);

  cfg.seed = 101;
  const AdaptResult c = adapt(w.base, w.test, cfg);
  CHECK(c.state.g_t->params() != a.state.g_t->params());
}

TEST_CASE("critic weights stay clipped after every critic step") {
  const ToyWorld w = toy_world(1.0);
  AdaConfig cfg = tiny_config(Variant::vanilla_ada);
  cfg.clip_c = 0.01;
  cfg.nets.critic_batchnorm = true;
  for (int steps : {1, 2, 5}) {
    cfg.n_steps = steps;
    const AdaptResult r = adapt(w.base, w.test, cfg);
    CHECK(r.state.d_t->max_abs_param() <= 0.01);
  }
}

TEST_CASE("phase schedule") {
  const ToyWorld w = toy_world(1.0);
  AdaConfig cfg = tiny_config();
  cfg.recovery_trigger.kind = TriggerKind::fixed_fraction;
  cfg.recovery_trigger.fraction = 0.25;
  const AdaptResult r = adapt(w.base, w.test, cfg);
  CHECK(r.state.switch_iteration == 10);
  CHECK(r.log[9].phase == Phase::warmup);
  CHECK(r.log[10].phase == Phase::recovery);

  cfg.recovery_trigger.fraction = 1.0;
  CHECK(adapt(w.base, w.test, cfg).state.phase == Phase::warmup);

  cfg.variant = Variant::std_da;
  const AdaptResult s = adapt(w.base, w.test, cfg);
  CHECK(s.log.front().phase == Phase::recovery);
  CHECK(s.state.classifier_trained);
}

TEST_CASE("adapt rejects bad inputs") {
  ToyWorld w = toy_world(0.0);
  data::FeatureDataset narrow = w.test;
  narrow.features = Matrix::Zero(narrow.rows(), 3);
  try {
    adapt(w.base, narrow, tiny_config());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::dimension_mismatch);
  }
  AdaConfig bad = tiny_config();
  bad.n_d = 0;
  CHECK_THROWS_AS(adapt(w.base, w.test, bad), Error);

  data::FeatureDataset nan_rows = w.test;
  nan_rows.features(0, 0) = std::numeric_limits<Real>::quiet_NaN();
  try {
    adapt(w.base, nan_rows, tiny_config());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::non_finite);
  }
}

TEST_CASE("prototype mapping") {
  const ToyWorld w = toy_world(0.0);
  AdaConfig cfg = tiny_config();
  cfg.nets.generator_residual = false;
  AdaState s = AdaState::initialize(cfg, 4, {2, 3, 4}, w.base.fingerprint());
  s.g_t = identity_generator(4, 3);

  const Index n = 10000;
  const auto protos = map_prototypes(s, w.base, n, 5);
  REQUIRE(protos.size() == 3);
  for (const auto& p : protos) {
    const auto truth = w.base.class_params(p.class_id);
    const double sigma_max = 1.0 / std::sqrt(truth.precision.minCoeff());
    CHECK((p.mean - truth.mean).cwiseAbs().maxCoeff() < 4.0 * sigma_max / std::sqrt(double(n)));
    CHECK(p.precision == truth.precision);
  }
  const auto again = map_prototypes(s, w.base, n, 5);
  for (std::size_t k = 0; k < 3; ++k) CHECK(again[k].mean == protos[k].mean);
  CHECK(map_prototypes(s, w.base, n, 6)[0].mean != protos[0].mean);

  // A constant generator maps every draw to its bias.
  nn::MlpNetwork constant = identity_generator(4, 3);
  Vector p = Vector::Zero(constant.params().size());
  p.tail(4) << 1, 2, 3, 4;
  constant.set_params(p);
  s.g_t = constant;
  const auto one = map_prototypes(s, w.base, 1, 5);
  CHECK(one[1].mean == p.tail(4));

  // n = 1 with the identity gives a single draw, not the mean.
  s.g_t = identity_generator(4, 3);
  const auto single = map_prototypes(s, w.base, 1, 5);
  CHECK(single[0].mean != w.base.class_params(2).mean);
  CHECK_THROWS_AS(map_prototypes(s, w.base, 0, 5), Error);
}

TEST_CASE("adapted state round trips through a directory") {
  const ToyWorld w = toy_world(2.0);
  const AdaptResult r = adapt(w.base, w.test, tiny_config());
  test::TempDir dir;
  save_state(dir.path() / "ada", r.state);
  for (const char* f : {"g_t.bin", "g_s.bin", "d_t.bin", "d_s.bin", "c_t.bin", "c_s.bin", "ada.json"})
    CHECK(std::filesystem::exists(dir.path() / "ada" / f));
  const AdaState back = load_state(dir.path() / "ada");
  CHECK(back.unseen_ids == r.state.unseen_ids);
  CHECK(back.phase == r.state.phase);
  CHECK(back.iteration == r.state.iteration);
  CHECK(back.base_fingerprint == r.state.base_fingerprint);
  CHECK(nlohmann::json(back.config) == nlohmann::json(r.state.config));
  CHECK(back.classify(w.test.features) == r.state.classify(w.test.features));
  const auto pa = map_prototypes(r.state, w.base, 100, 3);
  const auto pb = map_prototypes(back, w.base, 100, 3);
  for (std::size_t k = 0; k < pa.size(); ++k) CHECK(pa[k].mean == pb[k].mean);

  const AdaptResult wo = adapt(w.base, w.test, tiny_config(Variant::cyclegan_wo));
  save_state(dir.path() / "wo", wo.state);
  CHECK_FALSE(std::filesystem::exists(dir.path() / "wo" / "c_t.bin"));
  CHECK_FALSE(load_state(dir.path() / "wo").c_t.has_value());

  try {
    load_state(dir.path() / "missing");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::missing_file);
  }
}

TEST_CASE("iteration log csv") {
  const ToyWorld w = toy_world(2.0);
  AdaConfig cfg = tiny_config();
  cfg.n_steps = 3;
  const AdaptResult r = adapt(w.base, w.test, cfg);
  test::TempDir dir;
  write_iteration_log_csv(dir.path() / "log.csv", r.log);
  std::ifstream in(dir.path() / "log.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "iter,L_adv_T,L_adv_S,L_cyc,L_clf_T,L_clf_S,phase");
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    CHECK(line.rfind(std::to_string(n - 1) + ",", 0) == 0);
    // Fallback switch at ceil(0.5 * 3) = 2.
    CHECK(line.substr(line.rfind(',') + 1) == (n <= 2 ? "warmup" : "recovery"));
  }
  CHECK(n == 3);
}
