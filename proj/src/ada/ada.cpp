#include "zslada/ada/ada.hpp"

#include "zslada/nn/checkpoint.hpp"
#include "zslada/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace zslada::ada {

using nlohmann::json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::vanilla_ada: return "vanilla_ada";
    case Variant::cyclegan_wo: return "cyclegan_wo";
    case Variant::std_da: return "std_da";
  }
  return "full";
}

std::string to_string(Phase p) { return p == Phase::warmup ? "warmup" : "recovery"; }

Variant variant_from_string(const std::string& name) {
  std::string n = name;
  std::replace(n.begin(), n.end(), '-', '_');
  if (n == "full") return Variant::full;
  if (n == "vanilla_ada") return Variant::vanilla_ada;
  if (n == "cyclegan_wo") return Variant::cyclegan_wo;
  if (n == "std_da") return Variant::std_da;
  throw Error(ErrorCode::invalid_config, "unknown variant '" + name + "'");
}

namespace {

Phase phase_from_string(const std::string& s) {
  if (s == "warmup") return Phase::warmup;
  if (s == "recovery") return Phase::recovery;
  throw Error(ErrorCode::invalid_config, "unknown phase '" + s + "'");
}

std::string to_string(CycleForm f) { return f == CycleForm::cross_domain ? "cross_domain" : "within_domain"; }

CycleForm cycle_form_from_string(const std::string& s) {
  if (s == "cross_domain") return CycleForm::cross_domain;
  if (s == "within_domain") return CycleForm::within_domain;
  throw Error(ErrorCode::invalid_config, "key 'cycle_form' must be cross_domain or within_domain");
}

std::string to_string(TriggerKind k) { return k == TriggerKind::accuracy_crossover ? "accuracy_crossover" : "fixed_fraction"; }

TriggerKind trigger_from_string(const std::string& s) {
  if (s == "accuracy_crossover") return TriggerKind::accuracy_crossover;
  if (s == "fixed_fraction") return TriggerKind::fixed_fraction;
  throw Error(ErrorCode::invalid_config, "key 'recovery_trigger.kind' must be accuracy_crossover or fixed_fraction");
}

void bad_config(const std::string& msg) { throw Error(ErrorCode::invalid_config, msg); }

}  // namespace

void AdaConfig::validate() const {
  if (!(chi >= 0.0)) bad_config("key 'chi' must be >= 0");
  if (!(beta >= 0.0)) bad_config("key 'beta' must be >= 0");
  if (!(xi >= 0.0)) bad_config("key 'xi' must be >= 0");
  if (n_d < 1) bad_config("key 'n_d' must be >= 1");
  if (!(clip_c > 0.0)) bad_config("key 'clip_c' must be > 0");
  if (n_steps < 0) bad_config("key 'n_steps' must be >= 0");
  if (batch_size < 1) bad_config("key 'batch_size' must be >= 1");
  if (!(learning_rate > 0.0)) bad_config("key 'learning_rate' must be > 0");
  if (!(rmsprop_decay > 0.0 && rmsprop_decay < 1.0)) bad_config("key 'rmsprop_decay' must lie in (0, 1)");
  if (!(recovery_trigger.fraction >= 0.0 && recovery_trigger.fraction <= 1.0))
    bad_config("key 'recovery_trigger.fraction' must lie in [0, 1]");
  if (recovery_trigger.check_every < 1) bad_config("key 'recovery_trigger.check_every' must be >= 1");
  if (recovery_trigger.samples_per_class < 1) bad_config("key 'recovery_trigger.samples_per_class' must be >= 1");
  if (relabel_every < 0) bad_config("key 'relabel_every' must be >= 0");
  if (!(nets.leaky_slope >= 0.0)) bad_config("key 'nets.leaky_slope' must be >= 0");
  if (!(nets.generator_dropout >= 0.0 && nets.generator_dropout < 1.0))
    bad_config("key 'nets.generator_dropout' must lie in [0, 1)");
  for (const auto* widths : {&nets.generator_hidden, &nets.critic_hidden, &nets.classifier_hidden}) {
    for (Index w : *widths)
      if (w < 1) bad_config("network widths in 'nets' must be >= 1");
  }
}

void to_json(json& j, const AdaConfig& c) {
  j = json{{"chi", c.chi},
           {"beta", c.beta},
           {"xi", c.xi},
           {"n_d", c.n_d},
           {"clip_c", c.clip_c},
           {"n_steps", c.n_steps},
           {"batch_size", c.batch_size},
           {"recovery_trigger",
            {{"kind", to_string(c.recovery_trigger.kind)},
             {"fraction", c.recovery_trigger.fraction},
             {"check_every", c.recovery_trigger.check_every},
             {"samples_per_class", c.recovery_trigger.samples_per_class}}},
           {"seed", c.seed},
           {"learning_rate", c.learning_rate},
           {"rmsprop_decay", c.rmsprop_decay},
           {"nets",
            {{"generator_hidden", c.nets.generator_hidden},
             {"critic_hidden", c.nets.critic_hidden},
             {"classifier_hidden", c.nets.classifier_hidden},
             {"leaky_slope", c.nets.leaky_slope},
             {"generator_batchnorm", c.nets.generator_batchnorm},
             {"critic_batchnorm", c.nets.critic_batchnorm},
             {"generator_dropout", c.nets.generator_dropout},
             {"generator_residual", c.nets.generator_residual}}},
           {"cycle_form", to_string(c.cycle_form)},
           {"mismatch_term", c.mismatch_term},
           {"relabel_every", c.relabel_every},
           {"variant", to_string(c.variant)},
           {"history_size", c.history_size}};
}

void update_from_json(const json& j, AdaConfig& c) {
  if (!j.is_object()) bad_config("adaptation config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    std::string where = key;
    try {
      if (key == "chi") c.chi = value.get<double>();
      else if (key == "beta") c.beta = value.get<double>();
      else if (key == "xi") c.xi = value.get<double>();
      else if (key == "n_d") c.n_d = value.get<int>();
      else if (key == "clip_c") c.clip_c = value.get<double>();
      else if (key == "n_steps") c.n_steps = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<Index>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "rmsprop_decay") c.rmsprop_decay = value.get<double>();
      else if (key == "cycle_form") c.cycle_form = cycle_form_from_string(value.get<std::string>());
      else if (key == "mismatch_term") c.mismatch_term = value.get<bool>();
      else if (key == "relabel_every") c.relabel_every = value.get<int>();
      else if (key == "variant") c.variant = variant_from_string(value.get<std::string>());
      else if (key == "history_size") c.history_size = value.get<std::size_t>();
      else if (key == "recovery_trigger") {
        if (!value.is_object()) bad_config("key 'recovery_trigger' must be an object");
        for (const auto& [k, v] : value.items()) {
          where = "recovery_trigger." + k;
          auto& t = c.recovery_trigger;
          if (k == "kind") t.kind = trigger_from_string(v.get<std::string>());
          else if (k == "fraction") t.fraction = v.get<double>();
          else if (k == "check_every") t.check_every = v.get<int>();
          else if (k == "samples_per_class") t.samples_per_class = v.get<Index>();
          else bad_config("unknown adaptation key '" + where + "'");
        }
      } else if (key == "nets") {
        if (!value.is_object()) bad_config("key 'nets' must be an object");
        for (const auto& [k, v] : value.items()) {
          where = "nets." + k;
          auto& n = c.nets;
          if (k == "generator_hidden") n.generator_hidden = v.get<std::vector<Index>>();
          else if (k == "critic_hidden") n.critic_hidden = v.get<std::vector<Index>>();
          else if (k == "classifier_hidden") n.classifier_hidden = v.get<std::vector<Index>>();
          else if (k == "leaky_slope") n.leaky_slope = v.get<double>();
          else if (k == "generator_batchnorm") n.generator_batchnorm = v.get<bool>();
          else if (k == "critic_batchnorm") n.critic_batchnorm = v.get<bool>();
          else if (k == "generator_dropout") n.generator_dropout = v.get<double>();
          else if (k == "generator_residual") n.generator_residual = v.get<bool>();
          else bad_config("unknown adaptation key '" + where + "'");
        }
      } else {
        bad_config("unknown adaptation key '" + key + "'");
      }
    } catch (const json::exception&) {
      bad_config("adaptation key '" + where + "' has the wrong type");
    }
  }
  c.validate();
}

AdaConfig ada_preset(const std::string& name) {
  AdaConfig c;
  if (name == "benchmark") return c;
  if (name == "synth-small") {
    c.nets.generator_hidden = {64};
    c.nets.critic_hidden = {64};
    c.nets.generator_residual = true;
    c.nets.generator_dropout = 0.0;
    c.nets.critic_batchnorm = false;
    c.clip_c = 1.0;
    c.learning_rate = 3e-4;
    c.n_steps = 3000;
    return c;
  }
  bad_config("unknown adaptation preset '" + name + "'");
  return c;
}

Vector augment_label(const Eigen::Ref<const Vector>& x, int c, int num_classes) {
  if (num_classes < 1) throw Error(ErrorCode::label_out_of_range, "number of classes must be >= 1");
  if (c < 0 || c >= num_classes)
    throw Error(ErrorCode::label_out_of_range,
                "class index " + std::to_string(c) + " outside [0, " + std::to_string(num_classes) + ")");
  Vector out = Vector::Zero(x.size() + num_classes);
  out.head(x.size()) = x;
  out[x.size() + c] = 1;
  return out;
}

Matrix augment_labels(const Matrix& x, const std::vector<int>& labels, int num_classes) {
  if (static_cast<Index>(labels.size()) != x.rows())
    throw Error(ErrorCode::dimension_mismatch, "augment_labels: " + std::to_string(labels.size()) + " labels for " +
                                                   std::to_string(x.rows()) + " rows");
  if (num_classes < 1) throw Error(ErrorCode::label_out_of_range, "number of classes must be >= 1");
  Matrix out = Matrix::Zero(x.rows(), x.cols() + num_classes);
  out.leftCols(x.cols()) = x;
  for (Index i = 0; i < x.rows(); ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    if (c < 0 || c >= num_classes)
      throw Error(ErrorCode::label_out_of_range,
                  "class index " + std::to_string(c) + " outside [0, " + std::to_string(num_classes) + ")");
    out(i, x.cols() + c) = 1;
  }
  return out;
}

bool LossTerms::finite() const {
  return std::isfinite(gen_t) && std::isfinite(gen_s) && std::isfinite(critic_t) && std::isfinite(critic_s) &&
         std::isfinite(cycle) && std::isfinite(clf_t) && std::isfinite(clf_s);
}

LossWeights LossWeights::total(const AdaConfig& c) {
  return {1.0, 1.0, 1.0, 1.0, c.chi, c.xi, c.xi};
}

LossWeights LossWeights::generator_step(const AdaConfig& c) {
  return {1.0, 1.0, 0.0, 0.0, c.chi, c.xi, c.xi};
}

LossWeights LossWeights::critic_step(const AdaConfig&) {
  return {0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0};
}

double LossWeights::combine(const LossTerms& t) const {
  return gen_t * t.gen_t + gen_s * t.gen_s + critic_t * t.critic_t + critic_s * t.critic_s + cycle * t.cycle +
         clf_t * t.clf_t + clf_s * t.clf_s;
}

namespace {

// Generator application G(v) on label-augmented rows, optionally residual.
struct GenPass {
  nn::ForwardPass pass;
  Matrix out;
};

GenPass run_generator(const nn::MlpNetwork& g, const Matrix& x, const std::vector<int>& labels, int U, bool residual,
                      std::uint64_t seed) {
  if (g.input_width() != x.cols() + U)
    throw Error(ErrorCode::dimension_mismatch, "generator expects " + std::to_string(g.input_width()) +
                                                   " inputs, got " + std::to_string(x.cols()) + " + " +
                                                   std::to_string(U));
  GenPass p{g.forward(augment_labels(x, labels, U), seed), {}};
  p.out = p.pass.output;
  if (residual) p.out += x;
  return p;
}

// Returns d/d(feature input) and accumulates parameter gradients.
Matrix generator_backward(const nn::MlpNetwork& g, const GenPass& p, const Matrix& upstream, Index d, bool residual,
                          Vector* param_grad) {
  nn::Gradients gr = g.backward(p.pass, upstream);
  if (param_grad) *param_grad += gr.params;
  Matrix in = gr.input.leftCols(d);
  if (residual) in += upstream;
  return in;
}

double mean_l1(const Matrix& diff) { return diff.cwiseAbs().sum() / static_cast<double>(diff.rows()); }

Matrix l1_grad(const Matrix& diff, double scale) {
  const double s = scale / static_cast<double>(diff.rows());
  return diff.unaryExpr([s](Real v) { return static_cast<Real>(v > 0 ? s : (v < 0 ? -s : 0.0)); });
}

double cross_entropy(const Matrix& logp, const std::vector<int>& labels) {
  double s = 0.0;
  for (Index i = 0; i < logp.rows(); ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    if (c < 0 || c >= logp.cols())
      throw Error(ErrorCode::label_out_of_range, "label " + std::to_string(c) + " outside classifier output");
    s -= logp(i, c);
  }
  return s / static_cast<double>(logp.rows());
}

Matrix cross_entropy_grad(const Matrix& logp, const std::vector<int>& labels, double scale) {
  Matrix g = Matrix::Zero(logp.rows(), logp.cols());
  const double s = scale / static_cast<double>(logp.rows());
  for (Index i = 0; i < logp.rows(); ++i) g(i, labels[static_cast<std::size_t>(i)]) = static_cast<Real>(-s);
  return g;
}

Matrix constant_grad(Index rows, double scale) {
  return Matrix::Constant(rows, 1, static_cast<Real>(scale / static_cast<double>(rows)));
}

void check_batch(const LabeledBatch& b, const char* what) {
  if (b.features.rows() == 0) throw Error(ErrorCode::empty_batch, std::string(what) + " batch is empty");
  if (static_cast<Index>(b.labels.size()) != b.features.rows())
    throw Error(ErrorCode::dimension_mismatch, std::string(what) + " batch has " + std::to_string(b.labels.size()) +
                                                   " labels for " + std::to_string(b.features.rows()) + " rows");
}

std::vector<int> permuted(const std::vector<int>& labels, std::uint64_t seed) {
  std::vector<int> out = labels;
  Rng rng(seed);
  for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng.below(i)]);
  return out;
}

}  // namespace

LossEvaluation evaluate_losses(const NetSet& nets, const BatchPair& batches, const LossOptions& o,
                               const LossWeights* w) {
  const Matrix& y = batches.source.features;
  const Matrix& x = batches.target.features;
  const auto& ly = batches.source.labels;
  const auto& lx = batches.target.labels;
  check_batch(batches.source, "source");
  check_batch(batches.target, "target");
  if (x.cols() != y.cols())
    throw Error(ErrorCode::dimension_mismatch, "source and target feature widths differ");
  const Index d = x.cols();
  const int U = o.num_classes;
  const bool cycle_on = nets.g_t && nets.g_s;
  if (cycle_on && x.rows() != y.rows())
    throw Error(ErrorCode::dimension_mismatch, "cycle loss needs equal batch sizes, got " +
                                                   std::to_string(y.rows()) + " and " + std::to_string(x.rows()));
  const bool recovery = o.phase == Phase::recovery;

  std::uint64_t seed_counter = o.dropout_seed;
  auto next_seed = [&seed_counter] { return splitmix64(seed_counter++); };

  LossEvaluation ev;
  LossTerms& t = ev.terms;

  std::optional<GenPass> gty, gtx, gsx, gsy, cyc1, cyc2;
  std::optional<nn::ForwardPass> dt_fake, dt_real, ds_fake, ds_real, ct_real, ct_fake, cs_real, cs_fake;
  std::vector<int> lx_perm;

  if (nets.g_t) {
    gty = run_generator(*nets.g_t, y, ly, U, o.residual, next_seed());
    gtx = run_generator(*nets.g_t, x, lx, U, o.residual, next_seed());
    t.gen_t += o.beta * mean_l1(gtx->out - x);
  }
  if (nets.g_s) {
    gsx = run_generator(*nets.g_s, x, lx, U, o.residual, next_seed());
    gsy = run_generator(*nets.g_s, y, ly, U, o.residual, next_seed());
    t.gen_s += o.beta * mean_l1(gsy->out - y);
  }
  const bool cross = o.cycle_form == CycleForm::cross_domain;
  if (cycle_on) {
    cyc1 = run_generator(*nets.g_s, gty->out, ly, U, o.residual, next_seed());
    cyc2 = run_generator(*nets.g_t, gsx->out, lx, U, o.residual, next_seed());
    t.cycle = mean_l1(cyc1->out - (cross ? x : y)) + mean_l1(cyc2->out - (cross ? y : x));
  }
  if (nets.d_t && nets.g_t) {
    dt_fake = nets.d_t->forward(gty->out, next_seed());
    dt_real = nets.d_t->forward(x, next_seed());
    const double fake = dt_fake->output.mean();
    const double real = dt_real->output.mean();
    t.gen_t -= fake;
    t.critic_t = fake - real;
  }
  if (nets.d_s && nets.g_s) {
    ds_fake = nets.d_s->forward(gsx->out, next_seed());
    ds_real = nets.d_s->forward(y, next_seed());
    const double fake = ds_fake->output.mean();
    const double real = ds_real->output.mean();
    t.gen_s -= fake;
    t.critic_s = fake - real;
  }
  if (o.mismatch_term && (nets.c_t || nets.c_s)) lx_perm = permuted(lx, next_seed());
  if (nets.c_t) {
    ct_real = nets.c_t->forward(x, next_seed());
    t.clf_t = cross_entropy(ct_real->output, lx);
    if (o.mismatch_term) t.clf_t -= 0.1 * cross_entropy(ct_real->output, lx_perm);
    if (recovery) {
      ct_fake = nets.c_t->forward(nets.g_t ? gty->out : y, next_seed());
      t.clf_t += cross_entropy(ct_fake->output, ly);
    }
  }
  if (nets.c_s) {
    cs_real = nets.c_s->forward(y, next_seed());
    t.clf_s = cross_entropy(cs_real->output, ly);
    if (recovery) {
      cs_fake = nets.c_s->forward(nets.g_s ? gsx->out : x, next_seed());
      t.clf_s += cross_entropy(cs_fake->output, lx);
    }
  }

  if (w) {
    NetGradients& g = ev.grads;
    auto zeros = [](const nn::MlpNetwork* n) { return n ? Vector(Vector::Zero(n->params().size())) : Vector(); };
    g.g_t = zeros(nets.g_t);
    g.g_s = zeros(nets.g_s);
    g.d_t = zeros(nets.d_t);
    g.d_s = zeros(nets.d_s);
    g.c_t = zeros(nets.c_t);
    g.c_s = zeros(nets.c_s);
    Vector* gt_grad = o.grad_generators && nets.g_t ? &g.g_t : nullptr;
    Vector* gs_grad = o.grad_generators && nets.g_s ? &g.g_s : nullptr;

    // Upstream gradients on the generator outputs, filled by the consumers first.
    Matrix up_gty, up_gsx;
    if (nets.g_t) up_gty = Matrix::Zero(y.rows(), d);
    if (nets.g_s) up_gsx = Matrix::Zero(x.rows(), d);

    if (dt_fake) {
      const double cf = -w->gen_t + w->critic_t;
      nn::Gradients gf = nets.d_t->backward(*dt_fake, constant_grad(y.rows(), cf));
      if (o.grad_critics) {
        nn::Gradients gr = nets.d_t->backward(*dt_real, constant_grad(x.rows(), -w->critic_t));
        g.d_t += gf.params + gr.params;
      }
      up_gty += gf.input;
    }
    if (ds_fake) {
      const double cf = -w->gen_s + w->critic_s;
      nn::Gradients gf = nets.d_s->backward(*ds_fake, constant_grad(x.rows(), cf));
      if (o.grad_critics) {
        nn::Gradients gr = nets.d_s->backward(*ds_real, constant_grad(y.rows(), -w->critic_s));
        g.d_s += gf.params + gr.params;
      }
      up_gsx += gf.input;
    }
    if (ct_real && o.grad_classifiers) {
      Matrix up = cross_entropy_grad(ct_real->output, lx, w->clf_t);
      if (o.mismatch_term) up -= cross_entropy_grad(ct_real->output, lx_perm, 0.1 * w->clf_t);
      g.c_t += nets.c_t->backward(*ct_real, up).params;
    }
    if (ct_fake) {
      nn::Gradients gr = nets.c_t->backward(*ct_fake, cross_entropy_grad(ct_fake->output, ly, w->clf_t));
      if (o.grad_classifiers) g.c_t += gr.params;
      if (nets.g_t) up_gty += gr.input;
    }
    if (cs_real && o.grad_classifiers) {
      g.c_s += nets.c_s->backward(*cs_real, cross_entropy_grad(cs_real->output, ly, w->clf_s)).params;
    }
    if (cs_fake) {
      nn::Gradients gr = nets.c_s->backward(*cs_fake, cross_entropy_grad(cs_fake->output, lx, w->clf_s));
      if (o.grad_classifiers) g.c_s += gr.params;
      if (nets.g_s) up_gsx += gr.input;
    }

    if (o.grad_generators) {
      if (cycle_on) {
        // cyc1 = G_S(G_T(y)), cyc2 = G_T(G_S(x)).
        up_gty += generator_backward(*nets.g_s, *cyc1, l1_grad(cyc1->out - (cross ? x : y), w->cycle), d, o.residual,
                                     gs_grad);
        up_gsx += generator_backward(*nets.g_t, *cyc2, l1_grad(cyc2->out - (cross ? y : x), w->cycle), d, o.residual,
                                     gt_grad);
      }
      if (nets.g_t) {
        generator_backward(*nets.g_t, *gty, up_gty, d, o.residual, gt_grad);
        generator_backward(*nets.g_t, *gtx, l1_grad(gtx->out - x, o.beta * w->gen_t), d, o.residual, gt_grad);
      }
      if (nets.g_s) {
        generator_backward(*nets.g_s, *gsx, up_gsx, d, o.residual, gs_grad);
        generator_backward(*nets.g_s, *gsy, l1_grad(gsy->out - y, o.beta * w->gen_s), d, o.residual, gs_grad);
      }
    }
  }

  if (gty) ev.g_t_pass = std::move(gty->pass);
  if (gsx) ev.g_s_pass = std::move(gsx->pass);
  if (dt_real) ev.d_t_pass = std::move(*dt_real);
  if (ds_real) ev.d_s_pass = std::move(*ds_real);
  if (ct_real) ev.c_t_pass = std::move(*ct_real);
  if (cs_real) ev.c_s_pass = std::move(*cs_real);
  return ev;
}

namespace {

int classes_in(const BatchPair& b) {
  int m = 0;
  for (int c : b.source.labels) m = std::max(m, c + 1);
  for (int c : b.target.labels) m = std::max(m, c + 1);
  return m;
}

// Infers the class count from a generator's input width when one is given.
LossOptions options_for(const BatchPair& b, const nn::MlpNetwork* g, double beta, bool residual) {
  LossOptions o;
  o.beta = beta;
  o.residual = residual;
  o.num_classes = g ? static_cast<int>(g->input_width() - b.source.features.cols()) : classes_in(b);
  if (o.num_classes < 1) throw Error(ErrorCode::dimension_mismatch, "generator input is not wider than the features");
  return o;
}

}  // namespace

double generator_loss_t(const nn::MlpNetwork& g_t, const nn::MlpNetwork& d_t, const BatchPair& b, double beta,
                        bool residual) {
  NetSet n;
  n.g_t = &g_t;
  n.d_t = &d_t;
  return evaluate_losses(n, b, options_for(b, &g_t, beta, residual)).terms.gen_t;
}

double generator_loss_s(const nn::MlpNetwork& g_s, const nn::MlpNetwork& d_s, const BatchPair& b, double beta,
                        bool residual) {
  NetSet n;
  n.g_s = &g_s;
  n.d_s = &d_s;
  return evaluate_losses(n, b, options_for(b, &g_s, beta, residual)).terms.gen_s;
}

double critic_loss_t(const nn::MlpNetwork& d_t, const nn::MlpNetwork& g_t, const BatchPair& b, bool residual) {
  NetSet n;
  n.g_t = &g_t;
  n.d_t = &d_t;
  return evaluate_losses(n, b, options_for(b, &g_t, 0.0, residual)).terms.critic_t;
}

double critic_loss_s(const nn::MlpNetwork& d_s, const nn::MlpNetwork& g_s, const BatchPair& b, bool residual) {
  NetSet n;
  n.g_s = &g_s;
  n.d_s = &d_s;
  return evaluate_losses(n, b, options_for(b, &g_s, 0.0, residual)).terms.critic_s;
}

double cycle_loss(const nn::MlpNetwork& g_t, const nn::MlpNetwork& g_s, const BatchPair& b, CycleForm form,
                  bool residual) {
  NetSet n;
  n.g_t = &g_t;
  n.g_s = &g_s;
  LossOptions o = options_for(b, &g_t, 0.0, residual);
  o.cycle_form = form;
  return evaluate_losses(n, b, o).terms.cycle;
}

double classifier_loss_t(const nn::MlpNetwork& c_t, const nn::MlpNetwork* g_t, const BatchPair& b, Phase phase,
                         bool residual) {
  NetSet n;
  n.c_t = &c_t;
  n.g_t = g_t;
  LossOptions o = options_for(b, g_t, 0.0, residual);
  o.num_classes = std::max(o.num_classes, static_cast<int>(c_t.output_width()));
  o.phase = phase;
  return evaluate_losses(n, b, o).terms.clf_t;
}

double classifier_loss_s(const nn::MlpNetwork& c_s, const nn::MlpNetwork* g_s, const BatchPair& b, Phase phase,
                         bool residual) {
  NetSet n;
  n.c_s = &c_s;
  n.g_s = g_s;
  LossOptions o = options_for(b, g_s, 0.0, residual);
  o.num_classes = std::max(o.num_classes, static_cast<int>(c_s.output_width()));
  o.phase = phase;
  return evaluate_losses(n, b, o).terms.clf_s;
}

TotalLoss total_loss(const NetSet& nets, const BatchPair& b, const AdaConfig& config, Phase phase) {
  const nn::MlpNetwork* g = nets.g_t ? nets.g_t : nets.g_s;
  LossOptions o = options_for(b, g, config.beta, config.nets.generator_residual);
  o.phase = phase;
  o.cycle_form = config.cycle_form;
  o.mismatch_term = config.mismatch_term;
  TotalLoss out;
  out.terms = evaluate_losses(nets, b, o).terms;
  out.total = LossWeights::total(config).combine(out.terms);
  return out;
}

nn::MlpNetwork identity_generator(Index dim, int num_classes) {
  nn::MlpSpec spec = nn::make_spec(dim + num_classes, {}, dim, nn::Activation::identity, nn::Activation::identity);
  nn::MlpNetwork net(spec, 0);
  Vector p = Vector::Zero(spec.param_count());
  const Index in = dim + num_classes;
  for (Index i = 0; i < dim; ++i) p[i * in + i] = 1;
  net.set_params(p);
  net.set_mode(nn::Mode::eval);
  return net;
}

AdaState AdaState::initialize(const AdaConfig& config, Index feature_dim, std::vector<int> unseen_ids,
                              std::uint64_t base_fingerprint) {
  config.validate();
  if (unseen_ids.empty()) throw Error(ErrorCode::empty_class, "adaptation needs at least one unseen class");
  if (feature_dim < 1) throw Error(ErrorCode::dimension_mismatch, "feature dimension must be >= 1");
  AdaState s;
  s.config = config;
  s.unseen_ids = std::move(unseen_ids);
  s.feature_dim = feature_dim;
  s.base_fingerprint = base_fingerprint;
  const int U = s.num_classes();
  const auto& n = config.nets;
  const Rng init = Rng::stream(config.seed, "ada-init");
  auto seed_of = [&init](const char* name) { return init.split(name).next_u64(); };
  const auto leaky = nn::Activation::leaky_relu;
  auto gen = [&](const char* name) {
    return nn::MlpNetwork(nn::make_spec(feature_dim + U, n.generator_hidden, feature_dim, leaky,
                                        nn::Activation::identity, n.generator_batchnorm, n.generator_dropout,
                                        n.leaky_slope),
                          seed_of(name));
  };
  auto critic = [&](const char* name) {
    nn::MlpNetwork d(nn::make_spec(feature_dim, n.critic_hidden, 1, leaky, nn::Activation::identity,
                                   n.critic_batchnorm, 0.0, n.leaky_slope),
                     seed_of(name));
    d.clip_params(config.clip_c);
    return d;
  };
  auto clf = [&](const char* name) {
    return nn::MlpNetwork(nn::make_spec(feature_dim, n.classifier_hidden, U, leaky, nn::Activation::log_softmax,
                                        false, 0.0, n.leaky_slope),
                          seed_of(name));
  };
  auto opt = [&](const nn::MlpNetwork& net) {
    return nn::Optimizer::rmsprop(net.params().size(), config.learning_rate, config.rmsprop_decay);
  };
  const Variant v = config.variant;
  if (v != Variant::std_da) {
    s.g_t = gen("g_t");
    s.d_t = critic("d_t");
  }
  if (v == Variant::full || v == Variant::cyclegan_wo) {
    s.g_s = gen("g_s");
    s.d_s = critic("d_s");
  }
  if (v != Variant::cyclegan_wo) s.c_t = clf("c_t");
  if (v == Variant::full) s.c_s = clf("c_s");
  if (s.g_t) s.opt_g_t = opt(*s.g_t);
  if (s.g_s) s.opt_g_s = opt(*s.g_s);
  if (s.d_t) s.opt_d_t = opt(*s.d_t);
  if (s.d_s) s.opt_d_s = opt(*s.d_s);
  if (s.c_t) s.opt_c_t = opt(*s.c_t);
  if (s.c_s) s.opt_c_s = opt(*s.c_s);
  return s;
}

int AdaState::index_of(int class_id) const {
  auto it = std::find(unseen_ids.begin(), unseen_ids.end(), class_id);
  if (it == unseen_ids.end())
    throw Error(ErrorCode::unknown_class, "class " + std::to_string(class_id) + " is not an unseen class");
  return static_cast<int>(it - unseen_ids.begin());
}

NetSet AdaState::nets() const {
  NetSet n;
  if (g_t) n.g_t = &*g_t;
  if (g_s) n.g_s = &*g_s;
  if (d_t) n.d_t = &*d_t;
  if (d_s) n.d_s = &*d_s;
  if (c_t) n.c_t = &*c_t;
  if (c_s) n.c_s = &*c_s;
  return n;
}

void AdaState::set_mode(nn::Mode mode) {
  for (auto* net : {&g_t, &g_s, &d_t, &d_s, &c_t, &c_s})
    if (*net) (*net)->set_mode(mode);
}

Matrix AdaState::transform_source(const Matrix& y, const std::vector<int>& labels) const {
  if (!g_t) return y;
  nn::MlpNetwork g = *g_t;
  g.set_mode(nn::Mode::eval);
  Matrix out = g(augment_labels(y, labels, num_classes()));
  if (config.nets.generator_residual) out += y;
  return out;
}

std::vector<int> AdaState::classify(const Matrix& x) const {
  if (!c_t || !classifier_trained) throw Error(ErrorCode::untrained_classifier, "no trained target classifier");
  nn::MlpNetwork c = *c_t;
  c.set_mode(nn::Mode::eval);
  const Matrix logp = c(x);
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) {
    Index best = 0;
    for (Index k = 1; k < logp.cols(); ++k)
      if (logp(i, k) > logp(i, best)) best = k;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

namespace {

// Per-class pools of target rows plus the base class-conditionals.
class BatchSampler {
 public:
  BatchSampler(const Matrix& x, std::vector<model::GaussianClassParams> params, int U)
      : x_(x), params_(std::move(params)), pools_(static_cast<std::size_t>(U)) {}

  void set_labels(const std::vector<int>& labels) {
    for (auto& p : pools_) p.clear();
    for (std::size_t i = 0; i < labels.size(); ++i) pools_[static_cast<std::size_t>(labels[i])].push_back(static_cast<Index>(i));
    active_.clear();
    for (std::size_t c = 0; c < pools_.size(); ++c)
      if (!pools_[c].empty()) active_.push_back(static_cast<int>(c));
    if (active_.empty()) throw Error(ErrorCode::empty_class, "no target rows to adapt on");
  }

  const std::vector<int>& active() const { return active_; }

  BatchPair draw(Index n, Rng& rng) const {
    BatchPair b;
    b.source.origin = BatchOrigin::source;
    b.target.origin = BatchOrigin::target;
    b.target.features.resize(n, x_.cols());
    b.target.labels.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      const int c = active_[rng.below(active_.size())];
      const auto& pool = pools_[static_cast<std::size_t>(c)];
      b.target.features.row(i) = x_.row(pool[rng.below(pool.size())]);
      b.target.labels[static_cast<std::size_t>(i)] = c;
    }
    b.source.labels = b.target.labels;
    b.source.features = sample_source(b.source.labels, rng);
    return b;
  }

  Matrix sample_source(const std::vector<int>& labels, Rng& rng) const {
    Matrix y(static_cast<Index>(labels.size()), x_.cols());
    std::map<int, std::vector<Index>> rows;
    for (std::size_t i = 0; i < labels.size(); ++i) rows[labels[i]].push_back(static_cast<Index>(i));
    for (const auto& [c, idx] : rows) {
      const Matrix draws =
          model::sample_gaussian(params_[static_cast<std::size_t>(c)], static_cast<Index>(idx.size()), rng.next_u64());
      for (std::size_t k = 0; k < idx.size(); ++k) y.row(idx[k]) = draws.row(static_cast<Index>(k));
    }
    return y;
  }

 private:
  const Matrix& x_;
  std::vector<model::GaussianClassParams> params_;
  std::vector<std::vector<Index>> pools_;
  std::vector<int> active_;
};

// Mean of the largest unseen-class posterior, with the base model's halved log-likelihoods.
double posterior_agreement(const model::BaseZslModel& base, const Matrix& x,
                           const std::vector<model::GaussianClassParams>& params) {
  const Matrix ll = base.log_likelihoods(x, params);
  double s = 0.0;
  for (Index i = 0; i < ll.rows(); ++i) {
    const RowVector r = 0.5 * ll.row(i);
    const double m = r.maxCoeff();
    s += 1.0 / (r.array() - m).exp().sum();
  }
  return s / static_cast<double>(ll.rows());
}

double generated_accuracy(const AdaState& s, const BatchSampler& sampler, Index per_class, Rng& rng) {
  if (!s.c_t) return 0.0;
  double acc = 0.0;
  for (int c : sampler.active()) {
    std::vector<int> labels(static_cast<std::size_t>(per_class), c);
    const Matrix y = s.transform_source(sampler.sample_source(labels, rng), labels);
    const std::vector<int> pred = s.classify(y);
    acc += static_cast<double>(std::count(pred.begin(), pred.end(), c)) / static_cast<double>(per_class);
  }
  return acc / static_cast<double>(sampler.active().size());
}

std::string describe(const LossTerms& t) {
  std::ostringstream o;
  o.precision(17);
  o << "L_G_T=" << t.gen_t << " L_G_S=" << t.gen_s << " L_D_T=" << t.critic_t << " L_D_S=" << t.critic_s
    << " L_cyc=" << t.cycle << " L_clf_T=" << t.clf_t << " L_clf_S=" << t.clf_s;
  return o.str();
}

void step_net(std::optional<nn::MlpNetwork>& net, std::optional<nn::Optimizer>& opt, const Vector& grad) {
  if (net && grad.size() > 0) nn::apply_gradient(*net, *opt, grad);
}

}  // namespace

AdaptResult adapt(const model::BaseZslModel& base, const data::FeatureDataset& test_data, const AdaConfig& config) {
  config.validate();
  if (test_data.rows() == 0) throw Error(ErrorCode::empty_batch, "no test rows to adapt on");
  if (test_data.dim() != base.feature_dim())
    throw Error(ErrorCode::dimension_mismatch, "test features have " + std::to_string(test_data.dim()) +
                                                   " columns, base model " + std::to_string(base.feature_dim()));
  const std::vector<int> unseen = base.label_space(model::LabelSpace::unseen);
  if (unseen.empty()) throw Error(ErrorCode::empty_class, "base model has no unseen classes");

  AdaptResult result;
  result.pseudo = model::pseudo_labels(base, test_data);
  const std::vector<model::GaussianClassParams> params = base.class_params(unseen);
  result.agreement_estimate = posterior_agreement(base, test_data.features, params);

  AdaState s = AdaState::initialize(config, base.feature_dim(), unseen, base.fingerprint());
  const int U = s.num_classes();
  std::vector<int> target_labels;
  for (int id : result.pseudo.labels) target_labels.push_back(s.index_of(id));

  BatchSampler sampler(test_data.features, params, U);
  sampler.set_labels(target_labels);

  Rng batch_rng = Rng::stream(config.seed, "ada-batches");
  Rng dropout_rng = Rng::stream(config.seed, "ada-dropout");
  Rng check_rng = Rng::stream(config.seed, "ada-trigger");

  LossOptions opts;
  opts.beta = config.beta;
  opts.cycle_form = config.cycle_form;
  opts.residual = config.nets.generator_residual;
  opts.mismatch_term = config.mismatch_term;
  opts.num_classes = U;

  const int fallback = static_cast<int>(std::ceil(config.recovery_trigger.fraction * config.n_steps));
  const bool std_da = config.variant == Variant::std_da;
  if (std_da) s.phase = Phase::recovery;

  for (int it = 0; it < config.n_steps; ++it) {
    if (s.phase == Phase::warmup) {
      bool to_recovery = it >= fallback;
      if (!to_recovery && config.recovery_trigger.kind == TriggerKind::accuracy_crossover && s.c_t && it > 0 &&
          it % config.recovery_trigger.check_every == 0) {
        s.set_mode(nn::Mode::eval);
        to_recovery = generated_accuracy(s, sampler, config.recovery_trigger.samples_per_class, check_rng) >=
                      result.agreement_estimate;
      }
      if (to_recovery) {
        s.phase = Phase::recovery;
        s.switch_iteration = it;
      }
    }
    if (config.relabel_every > 0 && s.phase == Phase::recovery && it > s.switch_iteration &&
        (it - s.switch_iteration) % config.relabel_every == 0) {
      target_labels = s.classify(test_data.features);
      sampler.set_labels(target_labels);
    }

    s.set_mode(nn::Mode::train);
    opts.phase = s.phase;

    // Generators and classifiers.
    BatchPair batch = sampler.draw(config.batch_size, batch_rng);
    opts.dropout_seed = dropout_rng.next_u64();
    opts.grad_generators = true;
    opts.grad_critics = false;
    opts.grad_classifiers = true;
    LossWeights gw = LossWeights::generator_step(config);
    if (std_da) gw.clf_t = 1.0;
    LossEvaluation ev = evaluate_losses(s.nets(), batch, opts, &gw);
    if (!ev.terms.finite())
      throw Error(ErrorCode::non_finite, "adaptation iteration " + std::to_string(it) + ": " + describe(ev.terms));
    step_net(s.g_t, s.opt_g_t, ev.grads.g_t);
    step_net(s.g_s, s.opt_g_s, ev.grads.g_s);
    step_net(s.c_t, s.opt_c_t, ev.grads.c_t);
    step_net(s.c_s, s.opt_c_s, ev.grads.c_s);
    if (ev.g_t_pass) s.g_t->absorb_batch_stats(*ev.g_t_pass);
    if (ev.g_s_pass) s.g_s->absorb_batch_stats(*ev.g_s_pass);
    if (s.c_t) s.classifier_trained = true;

    // Critics.
    if (s.d_t || s.d_s) {
      opts.grad_generators = false;
      opts.grad_critics = true;
      opts.grad_classifiers = false;
      const LossWeights cw = LossWeights::critic_step(config);
      NetSet critic_nets = s.nets();
      critic_nets.c_t = nullptr;
      critic_nets.c_s = nullptr;
      for (int k = 0; k < config.n_d; ++k) {
        BatchPair cb = sampler.draw(config.batch_size, batch_rng);
        opts.dropout_seed = dropout_rng.next_u64();
        LossEvaluation cev = evaluate_losses(critic_nets, cb, opts, &cw);
        if (!cev.terms.finite())
          throw Error(ErrorCode::non_finite, "adaptation iteration " + std::to_string(it) + ", critic step " +
                                                 std::to_string(k) + ": " + describe(cev.terms));
        step_net(s.d_t, s.opt_d_t, cev.grads.d_t);
        step_net(s.d_s, s.opt_d_s, cev.grads.d_s);
        if (cev.d_t_pass) s.d_t->absorb_batch_stats(*cev.d_t_pass);
        if (cev.d_s_pass) s.d_s->absorb_batch_stats(*cev.d_s_pass);
        if (s.d_t) s.d_t->clip_params(config.clip_c);
        if (s.d_s) s.d_s->clip_params(config.clip_c);
      }
    }

    IterationLog rec{it, ev.terms, s.phase};
    result.log.push_back(rec);
    s.history.push_back(rec);
    while (s.history.size() > config.history_size) s.history.pop_front();
    s.iteration = it + 1;
  }
  s.set_mode(nn::Mode::eval);
  result.state = std::move(s);
  return result;
}

std::vector<model::GaussianClassParams> map_prototypes(const AdaState& state, const model::BaseZslModel& base,
                                                       Index n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw Error(ErrorCode::invalid_config, "prototype sample count must be >= 1");
  std::vector<model::GaussianClassParams> out = base.class_params(state.unseen_ids);
  const Rng root = Rng::stream(seed, "ada-prototypes");
  for (std::size_t k = 0; k < out.size(); ++k) {
    auto& p = out[k];
    const Matrix y = model::sample_gaussian(p, n_samples, root.split(std::to_string(p.class_id)).next_u64());
    const std::vector<int> labels(static_cast<std::size_t>(n_samples), static_cast<int>(k));
    p.mean = state.transform_source(y, labels).colwise().mean().transpose();
  }
  return out;
}

void write_iteration_log_csv(const std::filesystem::path& path, const std::vector<IterationLog>& log) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out.precision(17);
  out << "iter,L_adv_T,L_adv_S,L_cyc,L_clf_T,L_clf_S,phase\n";
  for (const auto& r : log) {
    out << r.iter << ',' << r.terms.adv_t() << ',' << r.terms.adv_s() << ',' << r.terms.cycle << ',' << r.terms.clf_t
        << ',' << r.terms.clf_s << ',' << to_string(r.phase) << '\n';
  }
  if (!out) throw Error(ErrorCode::io_error, "failed writing " + path.string());
}

namespace {

constexpr const char* kNetNames[] = {"g_t", "g_s", "d_t", "d_s", "c_t", "c_s"};

std::optional<nn::MlpNetwork>* net_slot(AdaState& s, int i) {
  std::optional<nn::MlpNetwork>* slots[] = {&s.g_t, &s.g_s, &s.d_t, &s.d_s, &s.c_t, &s.c_s};
  return slots[i];
}

const std::optional<nn::MlpNetwork>& net_slot(const AdaState& s, int i) {
  const std::optional<nn::MlpNetwork>* slots[] = {&s.g_t, &s.g_s, &s.d_t, &s.d_s, &s.c_t, &s.c_s};
  return *slots[i];
}

}  // namespace

void save_state(const std::filesystem::path& dir, const AdaState& state) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::io_error, "cannot create " + dir.string() + ": " + ec.message());
  json nets = json::array();
  for (int i = 0; i < 6; ++i) {
    const auto& slot = net_slot(state, i);
    if (!slot) continue;
    nn::save_checkpoint(dir / (std::string(kNetNames[i]) + ".bin"), *slot, state.config.seed);
    nets.push_back(kNetNames[i]);
  }
  json j = {{"config", state.config},
            {"networks", nets},
            {"unseen_ids", state.unseen_ids},
            {"feature_dim", state.feature_dim},
            {"base_fingerprint", hex64(state.base_fingerprint)},
            {"phase", to_string(state.phase)},
            {"iteration", state.iteration},
            {"switch_iteration", state.switch_iteration},
            {"classifier_trained", state.classifier_trained}};
  std::ofstream out(dir / "ada.json");
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + (dir / "ada.json").string());
  out << j.dump(2) << '\n';
}

AdaState load_state(const std::filesystem::path& dir) {
  const auto meta_path = dir / "ada.json";
  std::ifstream in(meta_path);
  if (!in) throw Error(ErrorCode::missing_file, "missing " + meta_path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, meta_path.string() + ": " + e.what());
  }
  AdaState s;
  try {
    update_from_json(j.at("config"), s.config);
    s.unseen_ids = j.at("unseen_ids").get<std::vector<int>>();
    s.feature_dim = j.at("feature_dim").get<Index>();
    s.base_fingerprint = std::stoull(j.at("base_fingerprint").get<std::string>(), nullptr, 16);
    s.phase = phase_from_string(j.at("phase").get<std::string>());
    s.iteration = j.at("iteration").get<int>();
    s.switch_iteration = j.at("switch_iteration").get<int>();
    s.classifier_trained = j.at("classifier_trained").get<bool>();
    for (const auto& name : j.at("networks")) {
      const auto n = name.get<std::string>();
      const auto* it = std::find_if(std::begin(kNetNames), std::end(kNetNames), [&](const char* k) { return n == k; });
      if (it == std::end(kNetNames)) throw Error(ErrorCode::parse_error, meta_path.string() + ": unknown network " + n);
      auto cp = nn::load_checkpoint(dir / (n + ".bin"));
      cp.network.set_mode(nn::Mode::eval);
      *net_slot(s, static_cast<int>(it - std::begin(kNetNames))) = std::move(cp.network);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, meta_path.string() + ": " + e.what());
  }
  auto opt = [&](const std::optional<nn::MlpNetwork>& net, std::optional<nn::Optimizer>& o) {
    if (net) o = nn::Optimizer::rmsprop(net->params().size(), s.config.learning_rate, s.config.rmsprop_decay);
  };
  opt(s.g_t, s.opt_g_t);
  opt(s.g_s, s.opt_g_s);
  opt(s.d_t, s.opt_d_t);
  opt(s.d_s, s.opt_d_s);
  opt(s.c_t, s.opt_c_t);
  opt(s.c_s, s.opt_c_s);
  return s;
}

}  // namespace zslada::ada
