#include "dettoy/training.hpp"

#include <cmath>
#include <numeric>

#include "dettoy/error.hpp"
#include "dettoy/evaluation.hpp"
#include "dettoy/random.hpp"

namespace dettoy {

using ad::Matrix;
using ad::Var;

LossWeights::LossWeights(double cls, double l1, double giou) : cls_(cls), l1_(l1), giou_(giou) {
  if (!(cls >= 0.0 && l1 >= 0.0 && giou >= 0.0)) {
    throw InvalidArgument("loss weights must be nonnegative");
  }
  if (cls == 0.0 && l1 == 0.0 && giou == 0.0) {
    throw InvalidArgument("at least one loss weight must be positive");
  }
}

Target make_target(const DatasetImage& image) {
  Target t;
  const auto n = static_cast<ad::Index>(image.ground_truths.size());
  t.boxes.resize(n, 4);
  for (ad::Index i = 0; i < n; ++i) {
    const auto& gt = image.ground_truths[static_cast<std::size_t>(i)];
    const Box b = to_cxcywh(gt.box, image.image.width, image.image.height);
    t.boxes.row(i) << b.c1, b.c2, b.c3, b.c4;
    t.labels.push_back(gt.label);
  }
  return t;
}

namespace {

double l1_cxcywh(const double* a, const double* b) {
  return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]) +
         std::abs(a[3] - b[3]);
}

double giou_cxcywh(const double* a, const double* b) {
  return giou(to_xyxy(Box::cxcywh(a[0], a[1], a[2], a[3]), 1.0, 1.0),
              to_xyxy(Box::cxcywh(b[0], b[1], b[2], b[3]), 1.0, 1.0));
}

}  // namespace

double matching_cost(const Detection& pred, const GroundTruth& gt, const LossWeights& weights) {
  if (pred.box.format != BoxFormat::CxcywhNorm || gt.box.format != BoxFormat::CxcywhNorm) {
    throw InvalidArgument("matching_cost expects normalized cxcywh boxes");
  }
  if (gt.label < 0 || gt.label >= static_cast<int>(pred.class_probs.size())) {
    throw InvalidArgument("ground-truth label outside the predicted distribution");
  }
  const double p[4] = {pred.box.c1, pred.box.c2, pred.box.c3, pred.box.c4};
  const double g[4] = {gt.box.c1, gt.box.c2, gt.box.c3, gt.box.c4};
  return -weights.cls() * pred.class_probs[static_cast<std::size_t>(gt.label)] +
         weights.l1() * l1_cxcywh(p, g) + weights.giou() * (1.0 - giou_cxcywh(p, g));
}

CostMatrix training_cost_matrix(const Matrix& logits, const Matrix& boxes, const Target& target,
                                const LossWeights& weights) {
  const auto nq = logits.rows();
  const auto ng = static_cast<ad::Index>(target.labels.size());
  Matrix probs = logits;
  for (ad::Index q = 0; q < nq; ++q) {
    const double m = probs.row(q).maxCoeff();
    probs.row(q) = (probs.row(q).array() - m).exp();
    probs.row(q) /= probs.row(q).sum();
  }
  CostMatrix cost(nq, ng);
  for (ad::Index q = 0; q < nq; ++q) {
    const double p[4] = {boxes(q, 0), boxes(q, 1), boxes(q, 2), boxes(q, 3)};
    for (ad::Index g = 0; g < ng; ++g) {
      const double t[4] = {target.boxes(g, 0), target.boxes(g, 1), target.boxes(g, 2),
                           target.boxes(g, 3)};
      cost(q, g) = -weights.cls() * probs(q, target.labels[static_cast<std::size_t>(g)]) +
                   weights.l1() * l1_cxcywh(p, t) + weights.giou() * (1.0 - giou_cxcywh(p, t));
    }
  }
  return cost;
}

LossBreakdown head_loss(const HeadOutput& head, const Target& target, const LossWeights& weights,
                        double no_object_weight) {
  ad::Tape& tape = *head.logits.tape();
  const auto nq = head.logits.rows();
  const int no_object = static_cast<int>(head.logits.cols()) - 1;
  const auto ng = target.labels.size();

  LossBreakdown out;
  MatchResult match;
  if (ng > 0) {
    match = solve_assignment(
        training_cost_matrix(head.logits.value(), head.boxes.value(), target, weights));
  } else {
    for (int q = 0; q < nq; ++q) match.unmatched_predictions.push_back(q);
  }

  std::vector<int> classes(static_cast<std::size_t>(nq), no_object);
  std::vector<double> class_weights(static_cast<std::size_t>(nq), no_object_weight);
  std::vector<int> pred_rows;
  std::vector<int> gt_rows;
  for (const auto& [q, g] : match.pairs) {
    classes[static_cast<std::size_t>(q)] = target.labels[static_cast<std::size_t>(g)];
    class_weights[static_cast<std::size_t>(q)] = 1.0;
    pred_rows.push_back(q);
    gt_rows.push_back(g);
  }
  const Var ce = ad::weighted_cross_entropy(head.logits, classes, class_weights);
  out.cls = ce.value()(0, 0);
  Var total = ad::scale(ce, weights.cls());

  if (!pred_rows.empty()) {
    const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, ng));
    Matrix matched_targets(static_cast<ad::Index>(gt_rows.size()), 4);
    for (std::size_t i = 0; i < gt_rows.size(); ++i) {
      matched_targets.row(static_cast<ad::Index>(i)) = target.boxes.row(gt_rows[i]);
    }
    const Var pred = ad::gather_rows(head.boxes, pred_rows);
    const Var l1 = ad::scale(ad::sum(ad::abs(ad::sub(pred, tape.constant(matched_targets)))), norm);
    const Var g = ad::scale(ad::sum(ad::giou_loss(pred, matched_targets)), norm);
    out.l1 = l1.value()(0, 0);
    out.giou = g.value()(0, 0);
    total = ad::add(total, ad::add(ad::scale(l1, weights.l1()), ad::scale(g, weights.giou())));
  }
  out.total = total;
  out.matches.push_back(std::move(match));
  return out;
}

LossBreakdown compute_loss(const ModelOutput& output, const Target& target,
                           const LossWeights& weights, double no_object_weight) {
  std::vector<const HeadOutput*> heads;
  if (output.encoder_proposals) heads.push_back(&*output.encoder_proposals);
  for (const auto& block : output.blocks) heads.push_back(&block);

  LossBreakdown sum;
  for (const HeadOutput* head : heads) {
    LossBreakdown part = head_loss(*head, target, weights, no_object_weight);
    sum.total = sum.matches.empty() ? part.total : ad::add(sum.total, part.total);
    sum.cls += part.cls;
    sum.l1 += part.l1;
    sum.giou += part.giou;
    sum.matches.push_back(std::move(part.matches.front()));
  }
  return sum;
}

nlohmann::json to_json(const TrainSettings& s) {
  return {{"epochs", s.epochs},
          {"batch_size", s.batch_size},
          {"learning_rate", s.learning_rate},
          {"weight_decay", s.weight_decay},
          {"beta1", s.beta1},
          {"beta2", s.beta2},
          {"adam_eps", s.adam_eps},
          {"grad_clip", s.grad_clip},
          {"no_object_weight", s.no_object_weight},
          {"lambda_cls", s.loss.cls()},
          {"lambda_l1", s.loss.l1()},
          {"lambda_giou", s.loss.giou()},
          {"seed", s.seed}};
}

TrainSettings train_settings_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ValidationError("training settings must be an object");
  TrainSettings s;
  double cls = s.loss.cls(), l1 = s.loss.l1(), gi = s.loss.giou();
  for (const auto& [key, value] : doc.items()) {
    try {
      if (key == "epochs") s.epochs = value.get<int>();
      else if (key == "batch_size") s.batch_size = value.get<int>();
      else if (key == "learning_rate") s.learning_rate = value.get<double>();
      else if (key == "weight_decay") s.weight_decay = value.get<double>();
      else if (key == "beta1") s.beta1 = value.get<double>();
      else if (key == "beta2") s.beta2 = value.get<double>();
      else if (key == "adam_eps") s.adam_eps = value.get<double>();
      else if (key == "grad_clip") s.grad_clip = value.get<double>();
      else if (key == "no_object_weight") s.no_object_weight = value.get<double>();
      else if (key == "lambda_cls") cls = value.get<double>();
      else if (key == "lambda_l1") l1 = value.get<double>();
      else if (key == "lambda_giou") gi = value.get<double>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else throw ValidationError("unknown training setting '" + key + "'");
    } catch (const nlohmann::json::type_error&) {
      throw ValidationError("training setting '" + key + "' has the wrong type");
    }
  }
  try {
    s.loss = LossWeights(cls, l1, gi);
  } catch (const InvalidArgument& e) {
    throw ValidationError(e.what());
  }
  if (s.epochs < 0) throw ValidationError("epochs must be >= 0");
  if (s.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(s.learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
  if (!(s.no_object_weight > 0.0)) throw ValidationError("no_object_weight must be > 0");
  return s;
}

nlohmann::json to_json(const EpochRecord& r) {
  nlohmann::json j = {{"epoch", r.epoch},         {"steps", r.steps},
                      {"loss", r.loss},           {"loss_cls", r.loss_cls},
                      {"loss_l1", r.loss_l1},     {"loss_giou", r.loss_giou},
                      {"val_mgiou", nullptr},     {"val_f1", nullptr}};
  if (r.val_mgiou) j["val_mgiou"] = *r.val_mgiou;
  if (r.val_f1) j["val_f1"] = *r.val_f1;
  return j;
}

namespace {

struct LockGuard {
  const Model& model;
  ~LockGuard() { model.unlock_parameters(); }
};

struct AdamState {
  Matrix m;
  Matrix v;
};

}  // namespace

std::vector<EpochRecord> train(Model& model, const Dataset& train_set, const Dataset* validation,
                               const TrainSettings& settings, const EpochCallback& on_epoch) {
  if (train_set.images.empty()) throw InvalidArgument("training set is empty");
  if (!model.try_lock_parameters()) {
    throw ContractViolation("model parameters are held by another operation");
  }
  LockGuard guard{model};

  const bool frozen = model.config().freeze_content_queries;
  const std::string content = Model::content_query_path();
  ParameterStore& params = model.parameters();
  if (frozen) params.at(content).setZero();

  std::vector<Target> targets;
  targets.reserve(train_set.images.size());
  for (const auto& image : train_set.images) targets.push_back(make_target(image));

  std::map<std::string, AdamState> state;
  for (const auto& [path, m] : params) {
    state[path] = {Matrix::Zero(m.rows(), m.cols()), Matrix::Zero(m.rows(), m.cols())};
  }

  std::vector<std::size_t> order(train_set.images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochRecord> log;
  long step = 0;
  for (int epoch = 1; epoch <= settings.epochs; ++epoch) {
    Rng rng(derive_seed(settings.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.below(i)]);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(settings.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(settings.batch_size));
      const double factor = 1.0 / static_cast<double>(end - start);
      ++step;
      Gradients grads;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        ad::Tape tape(true);
        ParameterBinding binding(tape, params);
        const auto diverged = [&] {
          return DivergenceError("non-finite loss at step " + std::to_string(step) + " (epoch " +
                                 std::to_string(epoch) + ", image id " +
                                 std::to_string(train_set.images[idx].id) + ")");
        };
        const ModelOutput out = model.forward(binding, train_set.images[idx].image);
        const auto finite = [](const HeadOutput& h) {
          return h.logits.value().allFinite() && h.boxes.value().allFinite();
        };
        for (const auto& head : out.blocks) {
          if (!finite(head)) throw diverged();
        }
        if (out.encoder_proposals && !finite(*out.encoder_proposals)) throw diverged();
        const LossBreakdown loss = compute_loss(out, targets[idx], settings.loss,
                                                settings.no_object_weight);
        const double value = loss.total.value()(0, 0);
        if (!std::isfinite(value)) throw diverged();
        tape.backward(loss.total);
        binding.collect_gradients(grads, factor);
        rec.loss += value;
        rec.loss_cls += loss.cls;
        rec.loss_l1 += loss.l1;
        rec.loss_giou += loss.giou;
      }
      if (frozen) grads.erase(content);

      if (settings.grad_clip > 0.0) {
        double sq = 0.0;
        for (const auto& [_, g] : grads) sq += g.squaredNorm();
        const double norm = std::sqrt(sq);
        if (!std::isfinite(norm)) {
          throw DivergenceError("non-finite gradient at step " + std::to_string(step));
        }
        if (norm > settings.grad_clip) {
          for (auto& [_, g] : grads) g *= settings.grad_clip / norm;
        }
      }
      const double bc1 = 1.0 - std::pow(settings.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(settings.beta2, static_cast<double>(step));
      for (auto& [path, g] : grads) {
        Matrix& p = params.at(path);
        AdamState& s = state.at(path);
        s.m = settings.beta1 * s.m + (1.0 - settings.beta1) * g;
        s.v = settings.beta2 * s.v + (1.0 - settings.beta2) * g.cwiseProduct(g);
        p *= 1.0 - settings.learning_rate * settings.weight_decay;
        p.array() -= settings.learning_rate * (s.m.array() / bc1) /
                     ((s.v.array() / bc2).sqrt() + settings.adam_eps);
      }
    }
    const double n = static_cast<double>(order.size());
    rec.steps = step;
    rec.loss /= n;
    rec.loss_cls /= n;
    rec.loss_l1 /= n;
    rec.loss_giou /= n;
    if (validation && !validation->images.empty()) {
      const DatasetEval eval = evaluate(model, *validation);
      rec.val_mgiou = eval.mgiou;
      rec.val_f1 = eval.weighted_f1;
    }
    log.push_back(rec);
    if (on_epoch) on_epoch(rec, model);
  }
  return log;
}

}  // namespace dettoy
