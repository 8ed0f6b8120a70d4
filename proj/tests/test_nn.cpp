#include <doctest.h>

#include <cmath>

#include "cilab/errors.hpp"
#include "cilab/cil.hpp"
#include "cilab/nn.hpp"
#include "oracles.hpp"

using namespace cilab;
using cilab::HeadKind;

namespace {

// Pointers to every trainable scalar, paired with the matching gradient
// values from a GradientSet, in one fixed order.
struct ParamView {
  std::vector<double*> values;

  static ParamView collect(Model& model) {
    ParamView view;
    auto add_extractor = [&view](FeatureExtractor& ex, bool frozen) {
      if (frozen) return;
      for (AffineLayer& layer : ex.layers) {
        for (double& v : layer.weight.data()) view.values.push_back(&v);
        for (double& v : layer.bias) view.values.push_back(&v);
      }
    };
    add_extractor(model.stem, model.stem_frozen || !model.has_stem());
    for (std::size_t bi = 0; bi < model.branches.size(); ++bi)
      add_extractor(model.branches[bi], model.branch_frozen[bi]);
    if (auto* lin = std::get_if<LinearClassifier>(&model.head)) {
      for (double& v : lin->weight.data()) view.values.push_back(&v);
      if (lin->use_bias)
        for (double& v : lin->bias) view.values.push_back(&v);
    } else {
      auto& cos = std::get<CosineClassifier>(model.head);
      for (double& v : cos.weight.data()) view.values.push_back(&v);
      if (cos.scale_learnable) view.values.push_back(&cos.scale);
    }
    return view;
  }
};

std::vector<double> flatten_grads(const Model& model, const GradientSet& grads) {
  std::vector<double> flat;
  auto add_layers = [&flat](const std::vector<std::optional<LayerGrad>>& layer_grads) {
    for (const auto& g : layer_grads) {
      if (!g) continue;
      for (const double v : g->weight.data()) flat.push_back(v);
      for (const double v : g->bias) flat.push_back(v);
    }
  };
  add_layers(grads.stem);
  for (const auto& branch : grads.branches) add_layers(branch);
  if (grads.head) {
    for (const double v : grads.head->weight.data()) flat.push_back(v);
    for (const double v : grads.head->bias) flat.push_back(v);
    if (const auto* cos = std::get_if<CosineClassifier>(&model.head)) {
      if (cos->scale_learnable) flat.push_back(grads.head->scale);
    }
  }
  return flat;
}

// Central finite differences against backward() for every trainable
// parameter. Relative error guarded at 1e-6 absolute scale.
void check_gradients(Model& model, const Matrix& batch, const std::vector<int>& labels,
                     const LossSpec& spec, double tolerance = 1e-4) {
  const BackwardResult res = backward(model, batch, labels, spec);
  const std::vector<double> analytic = flatten_grads(model, res.grads);
  ParamView view = ParamView::collect(model);
  REQUIRE(view.values.size() == analytic.size());

  const double eps = 1e-4;
  for (std::size_t i = 0; i < view.values.size(); ++i) {
    double* p = view.values[i];
    const double saved = *p;
    *p = saved + eps;
    const double up = loss_value(model, batch, labels, spec);
    *p = saved - eps;
    const double down = loss_value(model, batch, labels, spec);
    *p = saved;
    const double fd = (up - down) / (2.0 * eps);
    const double scale = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
    CHECK(std::abs(fd - analytic[i]) / scale < tolerance);
  }
}

Model seeded_model(std::uint64_t seed, HeadKind kind, std::size_t classes = 4,
                   bool scale_learnable = false) {
  RngStream rng(seed);
  FeatureExtractor ex = make_extractor(6, {8, 8}, 5, rng);
  Classifier head;
  if (kind == HeadKind::kLinear) {
    head = make_linear_classifier(classes, 5, rng);
  } else {
    head = make_cosine_classifier(classes, 5, 24.0, scale_learnable, rng);
  }
  std::vector<int> head_classes(classes);
  for (std::size_t i = 0; i < classes; ++i) head_classes[i] = static_cast<int>(i);
  return make_single_branch_model(std::move(ex), std::move(head), head_classes);
}

}  // namespace

TEST_CASE("zero-weight network maps any input to zero taps and features") {
  RngStream rng(1);
  FeatureExtractor ex = make_extractor(4, {6}, 3, rng);
  for (AffineLayer& layer : ex.layers) {
    for (double& v : layer.weight.data()) v = 0.0;
    for (double& v : layer.bias) v = 0.0;
  }
  const Matrix batch = oracle::random_matrix(5, 4, rng);
  const ForwardTaps fwd = forward_with_taps(ex, batch);
  for (const Matrix& tap : fwd.taps.activations)
    for (const double v : tap.data()) CHECK(v == 0.0);
  for (const double v : fwd.features.data()) CHECK(v == 0.0);
}

TEST_CASE("identity single layer: tap is ReLU(X), feature layer passes through") {
  RngStream rng(2);
  FeatureExtractor ex;
  AffineLayer relu_layer;
  relu_layer.weight = Matrix::identity(3);
  relu_layer.bias.assign(3, 0.0);
  relu_layer.relu = true;
  AffineLayer feature_layer;
  feature_layer.weight = Matrix::identity(3);
  feature_layer.bias.assign(3, 0.0);
  feature_layer.relu = false;
  ex.layers = {relu_layer, feature_layer};
  ex.tap_ids = {"stage1", "feature"};

  const Matrix x = oracle::random_matrix(4, 3, rng);
  const ForwardTaps fwd = forward_with_taps(ex, x);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double relu = x(i, j) > 0.0 ? x(i, j) : 0.0;
      CHECK(fwd.taps.activations[0](i, j) == relu);
      CHECK(fwd.features(i, j) == relu);
    }
  }
}

TEST_CASE("forward matches a layer-by-layer oracle") {
  RngStream rng(3);
  FeatureExtractor ex = make_extractor(5, {7, 6}, 4, rng);
  const Matrix batch = oracle::random_matrix(9, 5, rng);

  Matrix act = batch;
  const ForwardTaps fwd = forward_with_taps(ex, batch);
  for (std::size_t li = 0; li < ex.layers.size(); ++li) {
    const AffineLayer& layer = ex.layers[li];
    Matrix wt = oracle::transpose(layer.weight);
    Matrix next = oracle::matmul(act, wt);
    for (std::size_t i = 0; i < next.rows(); ++i)
      for (std::size_t j = 0; j < next.cols(); ++j) {
        next(i, j) += layer.bias[j];
        if (layer.relu && next(i, j) < 0.0) next(i, j) = 0.0;
      }
    act = next;
    for (std::size_t i = 0; i < act.size(); ++i)
      CHECK(fwd.taps.activations[li].data()[i] ==
            doctest::Approx(act.data()[i]).epsilon(1e-12));
  }
}

TEST_CASE("final feature layer carries no ReLU") {
  RngStream rng(4);
  const FeatureExtractor ex = make_extractor(4, {8, 8}, 6, rng);
  CHECK_FALSE(ex.layers.back().relu);
  for (std::size_t li = 0; li + 1 < ex.layers.size(); ++li) CHECK(ex.layers[li].relu);
  CHECK(ex.tap_ids.back() == "feature");
}

TEST_CASE("cosine head: parallel weight gives logit s, orthogonal gives 0") {
  CosineClassifier head;
  head.weight = Matrix(2, 3);
  head.weight(0, 0) = 2.0;  // parallel to x
  head.weight(1, 1) = 5.0;  // orthogonal to x
  head.scale = 24.0;
  Matrix x(1, 3);
  x(0, 0) = 0.5;
  const Matrix logits = classify(Classifier(head), x);
  CHECK(logits(0, 0) == doctest::Approx(24.0).epsilon(1e-12));
  CHECK(logits(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("linear head with identity weight reproduces features") {
  LinearClassifier head;
  head.weight = Matrix::identity(4);
  head.bias.assign(4, 0.0);
  RngStream rng(5);
  const Matrix x = oracle::random_matrix(3, 4, rng);
  const Matrix logits = classify(Classifier(head), x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(logits.data()[i] == x.data()[i]);
}

TEST_CASE("cosine head rejects zero-norm rows") {
  CosineClassifier head;
  head.weight = Matrix(1, 3);
  head.weight(0, 0) = 1.0;
  Matrix zero(1, 3);
  CHECK_THROWS_AS(classify(Classifier(head), zero), NormalizationError);

  CosineClassifier zero_weight;
  zero_weight.weight = Matrix(1, 3);
  Matrix x(1, 3, 1.0);
  CHECK_THROWS_AS(classify(Classifier(zero_weight), x), NormalizationError);
}

TEST_CASE("cosine argmax is independent of the scale") {
  RngStream rng(6);
  const Matrix features = oracle::random_normal_matrix(12, 5, rng);
  std::vector<std::vector<std::size_t>> argmaxes;
  for (const double s : {1.0, 24.0, 100.0}) {
    CosineClassifier head;
    RngStream wrng(7);
    head.weight = oracle::random_normal_matrix(6, 5, wrng);
    head.scale = s;
    const Matrix logits = classify(Classifier(head), features);
    std::vector<std::size_t> arg;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < logits.cols(); ++j)
        if (logits(i, j) > logits(i, best)) best = j;
      arg.push_back(best);
    }
    argmaxes.push_back(arg);
  }
  CHECK(argmaxes[0] == argmaxes[1]);
  CHECK(argmaxes[1] == argmaxes[2]);
}

TEST_CASE("masked CE with a single active class is exactly zero") {
  RngStream rng(8);
  const Matrix logits = oracle::random_matrix(5, 4, rng);
  const std::vector<int> labels(5, 2);
  const LossGrad out = cross_entropy_masked(logits, labels, {2});
  CHECK(out.loss == 0.0);
  for (const double v : out.dlogits.data()) CHECK(v == 0.0);
}

TEST_CASE("masked CE on uniform logits is ln(m)") {
  const Matrix logits(3, 6, 0.4);
  const std::vector<int> labels = {0, 1, 2};
  const LossGrad out = cross_entropy_masked(logits, labels, {0, 1, 2});
  CHECK(out.loss == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("masked CE matches the slice-then-CE oracle") {
  RngStream rng(9);
  const Matrix logits = oracle::random_matrix(7, 6, rng);
  const std::vector<int> active = {2, 3, 4};
  std::vector<int> labels;
  for (std::size_t i = 0; i < 7; ++i)
    labels.push_back(active[i % active.size()]);
  const LossGrad out = cross_entropy_masked(logits, labels, active);
  CHECK(out.loss ==
        doctest::Approx(oracle::sliced_cross_entropy(logits, labels, active)).epsilon(1e-12));
  // Inactive columns keep zero gradient.
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(out.dlogits(i, 0) == 0.0);
    CHECK(out.dlogits(i, 1) == 0.0);
    CHECK(out.dlogits(i, 5) == 0.0);
  }
}

TEST_CASE("masked CE over all classes equals standard CE") {
  RngStream rng(10);
  const Matrix logits = oracle::random_matrix(6, 5, rng);
  std::vector<int> labels = {0, 1, 2, 3, 4, 0};
  std::vector<int> all = {0, 1, 2, 3, 4};
  const LossGrad masked = cross_entropy_masked(logits, labels, all);
  CHECK(masked.loss ==
        doctest::Approx(oracle::sliced_cross_entropy(logits, labels, all)).epsilon(1e-12));
}

TEST_CASE("masked CE rejects labels outside the active set") {
  const Matrix logits(2, 4, 0.0);
  CHECK_THROWS_AS(cross_entropy_masked(logits, {0, 3}, {0, 1}), ProtocolError);
  CHECK_THROWS_AS(cross_entropy_masked(logits, {0, 1}, {0, 7}), ProtocolError);
}

TEST_CASE("distillation of identical logits is zero") {
  RngStream rng(11);
  const Matrix logits = oracle::random_matrix(4, 5, rng);
  const LossGrad out = distill_loss(logits, logits, 2.0);
  CHECK(out.loss == 0.0);
  for (const double v : out.dlogits.data()) CHECK(v == 0.0);
}

TEST_CASE("distillation loss decreases monotonically in T on a seeded pair") {
  RngStream rng(12);
  Matrix student = oracle::random_normal_matrix(6, 5, rng);
  Matrix teacher = oracle::random_normal_matrix(6, 5, rng);
  for (double& v : student.data()) v *= 3.0;
  for (double& v : teacher.data()) v *= 3.0;
  double prev = std::numeric_limits<double>::infinity();
  for (const double t : {1.0, 2.0, 4.0, 8.0}) {
    const double loss = distill_loss(student, teacher, t).loss;
    CHECK(loss == doctest::Approx(oracle::distill(student, teacher, t)).epsilon(1e-12));
    CHECK(loss < prev);
    prev = loss;
  }
}

TEST_CASE("distillation rejects bad arguments") {
  const Matrix a(2, 3, 0.0);
  const Matrix b(2, 4, 0.0);
  CHECK_THROWS_AS(distill_loss(a, b, 2.0), DimensionError);
  CHECK_THROWS_AS(distill_loss(a, a, 0.0), ParameterError);
  CHECK_THROWS_AS(distill_loss(a, a, -1.0), ParameterError);
}

TEST_CASE("zero loss yields all-zero gradients") {
  Model model = seeded_model(13, HeadKind::kLinear, 4);
  RngStream rng(14);
  const Matrix batch = oracle::random_matrix(6, 6, rng);
  const std::vector<int> labels(6, 1);
  LossSpec spec;
  spec.active_classes = {1};
  const BackwardResult res = backward(model, batch, labels, spec);
  CHECK(res.loss == 0.0);
  for (const double v : flatten_grads(model, res.grads)) CHECK(v == 0.0);
}

TEST_CASE("finite differences: linear head, masked CE") {
  Model model = seeded_model(15, HeadKind::kLinear, 4);
  RngStream rng(16);
  const Matrix batch = oracle::random_matrix(8, 6, rng);
  const std::vector<int> labels = {0, 1, 2, 1, 0, 2, 1, 0};
  LossSpec spec;
  spec.active_classes = {0, 1, 2};
  check_gradients(model, batch, labels, spec);
}

TEST_CASE("finite differences: cosine head with learnable scale") {
  Model model = seeded_model(17, HeadKind::kCosine, 4, /*scale_learnable=*/true);
  RngStream rng(18);
  const Matrix batch = oracle::random_matrix(8, 6, rng);
  const std::vector<int> labels = {0, 1, 2, 3, 0, 1, 2, 3};
  LossSpec spec;
  spec.active_classes = {0, 1, 2, 3};
  check_gradients(model, batch, labels, spec);
}

TEST_CASE("finite differences: distillation term") {
  Model model = seeded_model(19, HeadKind::kLinear, 4);
  RngStream rng(20);
  const Matrix batch = oracle::random_matrix(8, 6, rng);
  const std::vector<int> labels = {0, 1, 2, 3, 0, 1, 2, 3};
  const Matrix teacher = oracle::random_matrix(8, 2, rng);
  LossSpec spec;
  spec.active_classes = {0, 1, 2, 3};
  spec.distill_weight = 1.5;
  spec.temperature = 2.0;
  spec.teacher_logits = &teacher;
  spec.distill_classes = {0, 1};
  check_gradients(model, batch, labels, spec);
}

TEST_CASE("frozen extractor yields head-only gradient buffers") {
  Model model = seeded_model(21, HeadKind::kLinear, 3);
  model.branch_frozen[0] = true;
  RngStream rng(22);
  const Matrix batch = oracle::random_matrix(5, 6, rng);
  const std::vector<int> labels = {0, 1, 2, 0, 1};
  LossSpec spec;
  spec.active_classes = {0, 1, 2};
  const BackwardResult res = backward(model, batch, labels, spec);
  for (const auto& g : res.grads.branches[0]) CHECK_FALSE(g.has_value());
  CHECK(res.grads.head.has_value());

  const std::uint64_t version_before = model.branches[0].param_version;
  sgd_step(model, res.grads, 0.1, 0.0);
  CHECK(model.branches[0].param_version == version_before);
}

TEST_CASE("sgd with lr = 0 leaves parameters bitwise unchanged") {
  Model model = seeded_model(23, HeadKind::kCosine, 3);
  Model before = model;
  RngStream rng(24);
  const Matrix batch = oracle::random_matrix(5, 6, rng);
  const std::vector<int> labels = {0, 1, 2, 0, 1};
  LossSpec spec;
  spec.active_classes = {0, 1, 2};
  const BackwardResult res = backward(model, batch, labels, spec);
  sgd_step(model, res.grads, 0.0, 0.5);
  CHECK(model_digest(model) == model_digest(before));
}

TEST_CASE("sgd scalar hand computation and elementwise oracle") {
  RngStream rng(25);
  Model model = seeded_model(25, HeadKind::kLinear, 3);
  // Scalar check: p=1, g=2, lr=0.1, wd=0 -> 0.8.
  model.branches[0].layers[0].weight(0, 0) = 1.0;
  GradientSet grads;
  grads.branches.resize(1);
  grads.branches[0].assign(model.branches[0].layers.size(), std::nullopt);
  LayerGrad g;
  g.weight = Matrix(model.branches[0].layers[0].out_dim(), model.branches[0].layers[0].in_dim());
  g.weight(0, 0) = 2.0;
  g.bias.assign(model.branches[0].layers[0].out_dim(), 0.0);
  grads.branches[0][0] = g;
  Model expected = model;
  sgd_step(model, grads, 0.1, 0.0);
  CHECK(model.branches[0].layers[0].weight(0, 0) == doctest::Approx(0.8).epsilon(1e-15));

  // Elementwise oracle with weight decay.
  const double lr = 0.05;
  const double wd = 0.01;
  for (std::size_t i = 0; i < expected.branches[0].layers[0].weight.size(); ++i) {
    double& p = expected.branches[0].layers[0].weight.data()[i];
    const double grad = i == 0 ? 2.0 : 0.0;
    p -= lr * (grad + wd * p);
  }
  Model stepped = seeded_model(25, HeadKind::kLinear, 3);
  stepped.branches[0].layers[0].weight(0, 0) = 1.0;
  expected.branches[0].layers[0].weight(0, 0) =
      1.0 - lr * (2.0 + wd * 1.0);
  sgd_step(stepped, grads, lr, wd);
  for (std::size_t i = 0; i < stepped.branches[0].layers[0].weight.size(); ++i)
    CHECK(stepped.branches[0].layers[0].weight.data()[i] ==
          doctest::Approx(expected.branches[0].layers[0].weight.data()[i]).epsilon(1e-15));
}

TEST_CASE("param_version strictly increases across training steps") {
  Model model = seeded_model(26, HeadKind::kLinear, 3);
  RngStream rng(27);
  const Matrix batch = oracle::random_matrix(6, 6, rng);
  const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
  LossSpec spec;
  spec.active_classes = {0, 1, 2};
  std::uint64_t last = model.branches[0].param_version;
  for (int step = 0; step < 3; ++step) {
    const BackwardResult res = backward(model, batch, labels, spec);
    sgd_step(model, res.grads, 0.05, 0.0);
    CHECK(model.branches[0].param_version > last);
    last = model.branches[0].param_version;
  }
}

TEST_CASE("count_macs: single affine and branch additivity") {
  RngStream rng(28);
  FeatureExtractor single;
  single.layers.push_back(make_affine(10, 5, false, rng));
  single.tap_ids = {"feature"};
  CHECK(count_macs(single) == 50);

  FeatureExtractor deep = make_extractor(10, {20, 20}, 5, rng);
  Model one_branch = make_single_branch_model(deep, make_linear_classifier(3, 5, rng), {0, 1, 2});
  Model two_branches = one_branch;
  two_branches.branches.push_back(one_branch.branches[0]);
  two_branches.branch_frozen.push_back(true);
  CHECK(extractor_macs(two_branches) == 2 * extractor_macs(one_branch));

  const std::size_t with_head =
      count_macs(deep, {Classifier(make_linear_classifier(3, 5, rng))});
  CHECK(with_head == count_macs(deep) + 15);
}

TEST_CASE("training is bitwise deterministic given equal seeds") {
  auto run_once = [](std::uint64_t seed) {
    Model model = seeded_model(seed, HeadKind::kCosine, 3);
    RngStream rng(seed + 1);
    const Matrix batch = oracle::random_matrix(12, 6, rng);
    std::vector<int> labels;
    for (std::size_t i = 0; i < 12; ++i) labels.push_back(static_cast<int>(i % 3));
    LossSpec spec;
    spec.active_classes = {0, 1, 2};
    for (int step = 0; step < 20; ++step) {
      const BackwardResult res = backward(model, batch, labels, spec);
      sgd_step(model, res.grads, 0.05, 1e-4);
    }
    return model_digest(model);
  };
  CHECK(run_once(100) == run_once(100));
  CHECK(run_once(100) != run_once(101));
}

TEST_CASE("multi-branch backward matches finite differences") {
  // Frozen first branch + trainable second branch + stem-less concat.
  RngStream rng(30);
  FeatureExtractor b0 = make_extractor(5, {6}, 4, rng);
  FeatureExtractor b1 = make_extractor(5, {6}, 4, rng);
  Model model;
  model.branches = {b0, b1};
  model.branch_frozen = {true, false};
  model.head = make_linear_classifier(3, 8, rng);
  model.head_classes = {0, 1, 2};

  const Matrix batch = oracle::random_matrix(7, 5, rng);
  const std::vector<int> labels = {0, 1, 2, 0, 1, 2, 0};
  LossSpec spec;
  spec.active_classes = {0, 1, 2};
  check_gradients(model, batch, labels, spec);
}

TEST_CASE("stem plus branch backward matches finite differences") {
  RngStream rng(31);
  Model model;
  model.stem = make_extractor(5, {}, 6, rng);  // single affine stem
  model.branches.push_back(make_extractor(6, {7}, 4, rng));
  model.branch_frozen = {false};
  model.head = make_cosine_classifier(3, 4, 24.0, false, rng);
  model.head_classes = {0, 1, 2};

  const Matrix batch = oracle::random_matrix(6, 5, rng);
  const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
  LossSpec spec;
  spec.active_classes = {0, 1, 2};
  check_gradients(model, batch, labels, spec);
}
