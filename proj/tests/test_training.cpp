#include <gtest/gtest.h>

#include "support.hpp"

using namespace fluid;
using testing_support::make_dataset;
using testing_support::numeric_gradient;
using testing_support::random_vector;
using testing_support::relative_error;

namespace {

constexpr int kFixtures = 20;

Dataset blob_dataset(std::size_t classes, std::size_t per_class, std::size_t pretrain, std::size_t dim,
                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Sample> s;
  for (ClassId c = 0; c < classes; ++c) {
    const Vector mu = random_vector(rng, dim, 3.0);
    for (std::size_t i = 0; i < per_class; ++i) {
      Vector x = random_vector(rng, dim);
      la::axpy(1.0, mu, x);
      s.push_back({x, c});
    }
  }
  return make_dataset(std::move(s), dim, classes, pretrain);
}

SampleRefs stream_refs(const Dataset& ds, ClassRole role) {
  SampleRefs out;
  for (ClassId c : ds.classes_with_role(role))
    for (std::size_t i : ds.stream_pool(c)) out.push_back(&ds[i]);
  return out;
}

}  // namespace

TEST(Losses, SoftmaxCrossEntropyGradient) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < kFixtures; ++t) {
    Vector z = random_vector(rng, 2 + rng() % 6, 2.0);
    const std::size_t y = rng() % z.size();
    Vector dz(z.size());
    softmax_xent(z, y, dz);
    EXPECT_LT(relative_error(dz, numeric_gradient({std::span<double>(z)}, [&] { return softmax_xent(z, y); })), 1e-6);
  }
  EXPECT_NEAR(softmax_xent(Vector{0, 0}, 1), std::log(2.0), 1e-15);
}

TEST(Losses, DistillationAndLwfGradients) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < kFixtures; ++t) {
    const std::size_t k = 1 + rng() % 6;
    Vector s = random_vector(rng, k, 2.0);
    const Vector te = random_vector(rng, k, 2.0);
    const double temp = 0.5 + double(rng() % 4);
    Vector ds(k, 0.0);
    distillation_loss(s, te, temp, ds);
    EXPECT_LT(relative_error(ds, numeric_gradient({std::span<double>(s)}, [&] { return distillation_loss(s, te, temp); })),
              1e-6);
    const std::size_t y = rng() % k;
    Vector dl(k, 0.0);
    const auto l = lwf_loss(s, te, temp, y, dl);
    EXPECT_TRUE(l.distilled);
    EXPECT_LT(relative_error(dl, numeric_gradient({std::span<double>(s)}, [&] { return lwf_loss(s, te, temp, y).total; })),
              1e-6);
  }
}

TEST(Losses, DistillationOfIdenticalLogitsIsTeacherEntropy) {
  const Vector z{1.0, -1.0, 0.5};
  const Vector p = la::softmax(z, 2.0);
  double h = 0.0;
  for (double v : p) h -= v * std::log(v);
  Vector d(3, 0.0);
  EXPECT_NEAR(distillation_loss(z, z, 2.0, d), h, 1e-12);
  for (double v : d) EXPECT_NEAR(v, 0.0, 1e-15);
  EXPECT_FALSE(lwf_loss(Vector{}, Vector{}, 2.0, 0).distilled);
  EXPECT_THROW(lwf_loss(Vector{1}, Vector{1, 2}, 2.0, 0), Error);
  EXPECT_THROW(lwf_loss(Vector{1}, Vector{1}, 2.0, 3), Error);
}

TEST(Losses, ModelCrossEntropyThroughMlp) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < kFixtures; ++t) {
    const std::size_t in = 3 + rng() % 3, hid = 3 + rng() % 4, k = 2 + rng() % 3;
    Model m(FeatureMap::mlp({in, hid}, rng()), LinearHead(hid));
    for (ClassId c = 0; c < k; ++c) m.admit(c);
    for (auto p : m.params(TrainScope::Head)) for (double& v : p) v = random_vector(rng, 1)[0];
    std::vector<Sample> data;
    for (int i = 0; i < 5; ++i) data.push_back({random_vector(rng, in), static_cast<ClassId>(rng() % k)});
    const SampleRefs r = refs(data);
    for (TrainScope scope : {TrainScope::Head, TrainScope::All}) {
      const auto lg = xent_loss_and_grad(m, r, scope);
      const Vector num = numeric_gradient(m.params(scope), [&] { return xent_loss_and_grad(m, r, scope).loss; });
      EXPECT_LT(relative_error(flatten(lg.grads), num), 1e-5);
    }
  }
}

TEST(Ewc, PenaltyValueAndGradient) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < kFixtures; ++t) {
    Vector a = random_vector(rng, 3), b = random_vector(rng, 2);
    EwcState st;
    st.lambda = 100.0;
    st.anchor = {random_vector(rng, 3), random_vector(rng, 2)};
    st.fisher = {random_vector(rng, 3), random_vector(rng, 2)};
    for (auto& f : st.fisher) for (double& v : f) v = v * v;
    ParamViews p{a, b};
    const auto pen = ewc_penalty(p, st);
    double want = 0.0;
    for (std::size_t k = 0; k < 3; ++k) want += 50.0 * st.fisher[0][k] * std::pow(a[k] - st.anchor[0][k], 2);
    for (std::size_t k = 0; k < 2; ++k) want += 50.0 * st.fisher[1][k] * std::pow(b[k] - st.anchor[1][k], 2);
    EXPECT_NEAR(pen.value, want, 1e-9 * std::max(1.0, want));
    EXPECT_LT(relative_error(flatten(pen.grad), numeric_gradient(p, [&] { return ewc_penalty(p, st).value; })), 1e-6);
  }
}

TEST(Ewc, ExtendPadsNewParametersWithZeroFisher) {
  EwcState st{{{1.0, 2.0}}, {{3.0, 4.0}}, 100.0};
  Vector w{1.0, 2.0, 9.0, 9.0};
  extend_ewc(st, ParamViews{w});
  EXPECT_EQ(st.anchor[0], (Vector{1, 2, 0, 0}));
  EXPECT_EQ(st.fisher[0], (Vector{3, 4, 0, 0}));
  EXPECT_DOUBLE_EQ(ewc_penalty(ParamViews{w}, st).value, 0.0);
  Vector small{1.0};
  EXPECT_THROW(extend_ewc(st, ParamViews{small}), Error);
}

TEST(Ewc, FisherIsMeanSquaredGradient) {
  std::mt19937_64 rng(5);
  Model m(FeatureMap::frozen(3), LinearHead(3));
  m.admit(0);
  m.admit(1);
  for (auto p : m.params(TrainScope::All)) for (double& v : p) v = random_vector(rng, 1)[0];
  std::vector<Sample> data{{random_vector(rng, 3), 0}, {random_vector(rng, 3), 1}};
  const auto f = fisher_estimate(m, refs(data), TrainScope::All);
  Vector want(8, 0.0);
  for (const auto& s : data) {
    const Vector p = la::softmax(m.logits(s.features));
    for (std::size_t i = 0; i < 2; ++i) {
      const double dz = p[i] - (i == s.label ? 1.0 : 0.0);
      for (std::size_t j = 0; j < 3; ++j) want[i * 3 + j] += 0.5 * std::pow(dz * s.features[j], 2);
      want[6 + i] += 0.5 * dz * dz;
    }
  }
  EXPECT_LT(relative_error(flatten(f), want), 1e-12);
  EXPECT_THROW(fisher_estimate(m, SampleRefs{}, TrainScope::All), Error);
}

TEST(Sgd, MomentumRecurrence) {
  Vector w{1.0, -1.0};
  SgdState st{0.1, 0.9, {}};
  sgd_step(ParamViews{w}, ParamBuffers{{1.0, 2.0}}, st);
  EXPECT_NEAR(w[0], 0.9, 1e-15);
  EXPECT_NEAR(w[1], -1.2, 1e-15);
  sgd_step(ParamViews{w}, ParamBuffers{{1.0, 2.0}}, st);
  // v = 0.9 * g + g
  EXPECT_NEAR(w[0], 0.9 - 0.19, 1e-15);
  EXPECT_NEAR(w[1], -1.2 - 0.38, 1e-15);
  Vector grown{0.0, 0.0, 0.0};
  st.velocity = {{1.0, 1.0}};
  sgd_step(ParamViews{grown}, ParamBuffers{{0.0, 0.0, 1.0}}, st);
  EXPECT_NEAR(grown[0], -0.09, 1e-15);
  EXPECT_NEAR(grown[2], -0.1, 1e-15);
  st.momentum = 1.0;
  EXPECT_THROW(sgd_step(ParamViews{grown}, ParamBuffers{{0.0, 0.0, 1.0}}, st), Error);
}

TEST(Prototypical, EpisodeGradient) {
  std::mt19937_64 rng(6);
  for (Similarity sim : {Similarity::Euclidean, Similarity::Cosine})
    for (int t = 0; t < kFixtures; ++t) {
      const std::size_t in = 3 + rng() % 3, out = 3 + rng() % 4, ways = 2 + rng() % 3;
      FeatureMap map = FeatureMap::mlp({in, out}, rng());
      for (auto p : map.params()) for (double& v : p) v += 0.3;
      Episode ep;
      for (std::size_t c = 0; c < ways; ++c) {
        ep.support.emplace_back();
        for (int n = 0; n < 2; ++n) ep.support.back().push_back(random_vector(rng, in));
        ep.query.emplace_back(random_vector(rng, in), c);
      }
      const auto l = proto_episode_loss(map, ep, sim);
      const Vector num = numeric_gradient(map.params(), [&] { return proto_episode_loss(map, ep, sim).loss; });
      EXPECT_LT(relative_error(flatten(l.grads), num), 1e-5);
    }
}

TEST(Prototypical, EpisodesDrawFromPretrainPool) {
  const Dataset ds = blob_dataset(6, 30, 4, 3, 7);
  std::mt19937_64 rng(1);
  const Episode ep = sample_episode(ds, 3, 5, 5, rng);
  EXPECT_EQ(ep.support.size(), 3u);
  EXPECT_EQ(ep.query.size(), 15u);
  EXPECT_THROW(sample_episode(ds, 3, 10, 10, rng), Error);
}

TEST(Strategy, Schedules) {
  const auto h = UpdateStrategy::hybrid(100, 2);
  EXPECT_TRUE(h.instance_at(1));
  EXPECT_FALSE(h.offline_at(99));
  EXPECT_TRUE(h.offline_at(200));
  const auto o = UpdateStrategy::offline_every(5000, 4);
  EXPECT_FALSE(o.instance_at(3));
  EXPECT_TRUE(o.offline_at(5000));
  EXPECT_FALSE(UpdateStrategy::none().offline_at(5000));
  EXPECT_FALSE(UpdateStrategy::instance().offline_at(5000));
  const auto w = UpdateStrategy::imprint_then_finetune(300, 100, 1);
  EXPECT_TRUE(w.instance_at(300));
  EXPECT_FALSE(w.instance_at(301));
  EXPECT_FALSE(w.offline_at(200));
  EXPECT_TRUE(w.offline_at(300));
  EXPECT_TRUE(w.offline_at(400));
  UpdateStrategy bad = o;
  bad.epochs = 0;
  EXPECT_THROW(bad.validate(), Error);
  for (auto k : {UpdateStrategy::Kind::None, UpdateStrategy::Kind::Hybrid, UpdateStrategy::Kind::ImprintThenFinetune})
    EXPECT_EQ(strategy_kind_from_string(to_string(k)), k);
  EXPECT_EQ(scaled_switch_at(90000), 10000u);
  EXPECT_EQ(scaled_switch_at(9000), 1000u);
}

TEST(Learner, ConfigDefaults) {
  LearnerConfig c;
  c.kind = LearnerKind::FineTune;
  EXPECT_EQ(c.scope(), TrainScope::Head);
  EXPECT_DOUBLE_EQ(c.resolved_learning_rate(), 0.1);
  c.kind = LearnerKind::Standard;
  EXPECT_DOUBLE_EQ(c.resolved_learning_rate(), 0.01);
  c.learning_rate = 0.3;
  EXPECT_DOUBLE_EQ(c.resolved_learning_rate(), 0.3);
  for (auto k : {LearnerKind::Ncm, LearnerKind::Lwf, LearnerKind::WeightImprinting})
    EXPECT_EQ(learner_kind_from_string(to_string(k)), k);
  EXPECT_THROW(learner_kind_from_string("svm"), Error);
}

TEST(Learner, NoClassesMeansNoPrediction) {
  LearnerConfig c;
  c.kind = LearnerKind::ExemplarTuning;
  Learner l(c, 4);
  const auto p = l.predict(Vector{1, 2, 3, 4});
  EXPECT_FALSE(p.predicted.has_value());
  EXPECT_EQ(p.macs, 0u);
}

TEST(Learner, FineTuneOfflineStepsAndMacs) {
  const Dataset ds = blob_dataset(6, 60, 3, 16, 8);
  LearnerConfig c;
  c.kind = LearnerKind::FineTune;
  Learner l(c, 16);
  l.pretrain(ds);
  SampleRefs buf = stream_refs(ds, ClassRole::Novel);
  buf.resize(130);
  for (const Sample* s : buf)
    if (!l.knows(s->label)) l.admit(*s);
  const std::size_t k = l.model().num_classes();
  const auto st = l.offline_update(buf, 4);
  EXPECT_EQ(st.optimizer_steps, offline_step_count(130, 4, 64));
  EXPECT_EQ(st.optimizer_steps, 12u);
  EXPECT_EQ(st.macs, 4u * 3u * 16u * k * 130u);
  EXPECT_EQ(meter_training(TrainingStep::Optimizer, 64, 16 * 10), 30720u);
}

TEST(Learner, OfflineTrainingReducesBufferLoss) {
  const Dataset ds = blob_dataset(5, 80, 2, 8, 9);
  for (auto kind : {LearnerKind::FineTune, LearnerKind::Standard, LearnerKind::ExemplarTuning, LearnerKind::Lwf,
                    LearnerKind::Ewc, LearnerKind::WeightImprinting}) {
    LearnerConfig c;
    c.kind = kind;
    if (kind == LearnerKind::Standard || kind == LearnerKind::Lwf || kind == LearnerKind::Ewc) c.hidden = {12};
    c.pretrain.epochs = 5;
    Learner l(c, 8);
    l.pretrain(ds);
    SampleRefs buf = stream_refs(ds, ClassRole::Novel);
    for (const Sample* s : buf)
      if (!l.knows(s->label)) l.admit(*s);
    for (const Sample* s : buf) l.instance_update(*s);
    Model before = l.model();
    const double loss0 = xent_loss_and_grad(before, buf, TrainScope::Head).loss;
    l.offline_update(buf, 3);
    Model after = l.model();
    EXPECT_LT(xent_loss_and_grad(after, buf, TrainScope::Head).loss, loss0) << to_string(kind);
  }
}

TEST(Learner, NcmOfflineIsNoOpAndInstanceUpdateCostsD) {
  const Dataset ds = blob_dataset(4, 20, 2, 6, 10);
  LearnerConfig c;
  c.kind = LearnerKind::Ncm;
  Learner l(c, 6);
  l.pretrain(ds);
  const SampleRefs buf = stream_refs(ds, ClassRole::Pretrain);
  EXPECT_EQ(l.offline_update(buf, 4), OfflineStats{});
  EXPECT_EQ(l.instance_update(*buf[0]), 6u);
  c.kind = LearnerKind::FineTune;
  Learner f(c, 6);
  f.pretrain(ds);
  EXPECT_EQ(f.instance_update(*buf[0]), 0u);
}

TEST(Learner, LwfSkipsDistillationWithoutSharedClasses) {
  const Dataset ds = blob_dataset(4, 40, 2, 6, 11);
  LearnerConfig c;
  c.kind = LearnerKind::Lwf;
  c.pretrain.epochs = 2;
  Learner l(c, 6);
  l.pretrain(ds);
  ASSERT_TRUE(l.teacher().has_value());
  SampleRefs novel = stream_refs(ds, ClassRole::Novel);
  for (const Sample* s : novel)
    if (!l.knows(s->label)) l.admit(*s);
  const std::uint64_t fwd = l.model().forward_macs(TrainScope::All);
  const auto st = l.offline_update(novel, 1);
  EXPECT_EQ(l.distillation_skips(), 1u);
  EXPECT_EQ(st.macs, 3 * fwd * novel.size());
  SampleRefs mixed = stream_refs(ds, ClassRole::Pretrain);
  mixed.resize(10);
  const std::uint64_t fwd2 = l.model().forward_macs(TrainScope::All);
  const auto st2 = l.offline_update(mixed, 1);
  EXPECT_EQ(l.distillation_skips(), 1u);
  EXPECT_EQ(st2.macs, 3 * fwd2 * 10 + l.teacher()->forward_macs(TrainScope::All) * 10);
}

TEST(Learner, EwcAnchorsPretrainWeightsOnly) {
  const Dataset ds = blob_dataset(4, 40, 2, 6, 12);
  LearnerConfig c;
  c.kind = LearnerKind::Ewc;
  c.hidden = {5};
  c.pretrain.epochs = 2;
  Learner l(c, 6);
  l.pretrain(ds);
  SampleRefs novel = stream_refs(ds, ClassRole::Novel);
  for (const Sample* s : novel)
    if (!l.knows(s->label)) l.admit(*s);
  l.offline_update(novel, 1);
  const auto& st = *l.ewc();
  // head weight rows for the two admitted classes carry no Fisher mass
  const Vector& fw = st.fisher[0];
  EXPECT_EQ(fw.size(), 4u * 5u);
  for (std::size_t i = 10; i < 20; ++i) EXPECT_EQ(fw[i], 0.0);
  double old_mass = 0.0;
  for (std::size_t i = 0; i < 10; ++i) old_mass += fw[i];
  EXPECT_GT(old_mass, 0.0);
}

TEST(Learner, WeightImprintingAdmitsWithNormalizedSample) {
  const Dataset ds = blob_dataset(3, 20, 1, 4, 13);
  LearnerConfig c;
  c.kind = LearnerKind::WeightImprinting;
  Learner l(c, 4);
  l.pretrain(ds);
  const Sample s{{1.0, 0.0, 0.0, 0.0}, 2};
  l.admit(s);
  const auto p = l.predict(Vector{2.0, 0.0, 0.0, 0.0});
  const auto& head = l.model().head_as<CosineHead>();
  EXPECT_NEAR(head.logits(Vector{2.0, 0.0, 0.0, 0.0})[1], 4.0, 1e-12);
  EXPECT_EQ(p.macs, 4u * 2u + 4u);
}

TEST(Learner, CheckpointRestoresPredictions) {
  const Dataset ds = blob_dataset(4, 30, 2, 5, 14);
  LearnerConfig c;
  c.kind = LearnerKind::WeightImprinting;
  Learner a(c, 5);
  a.pretrain(ds);
  Learner b(c, 5);
  b.restore(nlohmann::json::parse(a.checkpoint().dump()));
  EXPECT_EQ(a.model(), b.model());
  c.kind = LearnerKind::Ncm;
  Learner n(c, 5);
  EXPECT_THROW(n.restore(a.checkpoint()), Error);
}

TEST(Learner, PrototypicalPretrainingRuns) {
  const Dataset ds = blob_dataset(6, 30, 4, 5, 15);
  LearnerConfig c;
  c.kind = LearnerKind::Ncm;
  c.hidden = {8};
  c.pretrain.method = PretrainConfig::Method::Prototypical;
  c.pretrain.meta_epochs = 3;
  c.pretrain.ways = 3;
  Learner l(c, 5);
  const Model untouched = l.model();
  l.pretrain(ds);
  EXPECT_FALSE(l.model().map() == untouched.map());
  EXPECT_EQ(l.model().num_classes(), 4u);
}
