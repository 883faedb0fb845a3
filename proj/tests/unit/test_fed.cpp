#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "fedvlf/error.hpp"
#include "fedvlf/fed.hpp"
#include "fedvlf/nn/serialize.hpp"
#include "fedvlf/rng.hpp"
#include "support/silos.hpp"

using namespace fedvlf;
using namespace fedvlf::fed;
using testing::toy_dims;

namespace {

std::vector<ais::VesselTrajectory> corpus(std::uint64_t seed, double turn = 0.0, int vessels = 6) {
  testing::CorpusSpec shape;
  shape.vessels = vessels;
  shape.points = 60;
  shape.turn_deg_per_step = turn;
  return testing::make_corpus(shape, seed);
}

Params constant(double v) {
  Params p(toy_dims());
  p.flat().setConstant(static_cast<float>(v));
  return p;
}

FedConfig toy_fed(int rounds) {
  FedConfig c;
  c.rounds = rounds;
  c.local_epochs = 1;
  c.local = testing::toy_train_config();
  return c;
}

bool same_logs(const std::vector<RoundLog>& a, const std::vector<RoundLog>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t r = 0; r < a.size(); ++r) {
    if (a[r].aggregate_val_loss != b[r].aggregate_val_loss || a[r].bytes_sent != b[r].bytes_sent ||
        a[r].bytes_received != b[r].bytes_received || a[r].silos.size() != b[r].silos.size()) {
      return false;
    }
    for (std::size_t s = 0; s < a[r].silos.size(); ++s) {
      const auto &x = a[r].silos[s], &y = b[r].silos[s];
      if (x.silo_id != y.silo_id || x.train_loss != y.train_loss || x.val_loss != y.val_loss || x.drift != y.drift ||
          x.diverged != y.diverged) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace

TEST_CASE("aggregate: weighted means") {
  const auto zero = constant(0), four = constant(4);
  const std::pair<const Params*, std::size_t> equal[] = {{&zero, 10}, {&four, 10}};
  CHECK(aggregate(equal).flat().isApproxToConstant(2.0f, 0.0f));
  const std::pair<const Params*, std::size_t> skewed[] = {{&zero, 1}, {&four, 3}};
  CHECK(aggregate(skewed).flat().isApproxToConstant(3.0f, 0.0f));
  const std::pair<const Params*, std::size_t> one_hot[] = {{&four, 1}, {&zero, 0}};
  CHECK(aggregate(one_hot) == four);
}

TEST_CASE("aggregate: five random silos vs brute-force weighted sum") {
  Rng rng(1);
  std::vector<Params> ps;
  std::vector<std::size_t> ns;
  for (int k = 0; k < 5; ++k) {
    ps.push_back(Params::random(toy_dims(), rng));
    ns.push_back(1 + rng.below(1000));
  }
  std::vector<std::pair<const Params*, std::size_t>> ups;
  for (int k = 0; k < 5; ++k) ups.emplace_back(&ps[static_cast<std::size_t>(k)], ns[static_cast<std::size_t>(k)]);
  const auto agg = aggregate(ups);
  double worst = 0;
  for (Eigen::Index i = 0; i < agg.flat().size(); ++i) {
    double num = 0, den = 0;
    for (int k = 0; k < 5; ++k) {
      num += static_cast<double>(ns[static_cast<std::size_t>(k)]) * ps[static_cast<std::size_t>(k)].flat()[i];
      den += static_cast<double>(ns[static_cast<std::size_t>(k)]);
    }
    const double oracle = num / den;
    // the stored value is the float nearest the double result
    worst = std::max(worst, std::abs(static_cast<double>(agg.flat()[i]) - static_cast<double>(static_cast<float>(oracle))));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("aggregate: identity and permutation invariance") {
  Rng rng(2);
  const auto p = Params::random(toy_dims(), rng);
  std::vector<std::pair<const Params*, std::size_t>> same(7, {&p, 0});
  for (std::size_t k = 0; k < same.size(); ++k) same[k].second = 3 + 11 * k;
  CHECK(aggregate(same) == p);

  std::vector<Params> ps;
  for (int k = 0; k < 6; ++k) ps.push_back(Params::random(toy_dims(), rng));
  std::vector<std::pair<const Params*, std::size_t>> ups;
  for (std::size_t k = 0; k < ps.size(); ++k) ups.emplace_back(&ps[k], 5 + 17 * k);
  const auto ref = aggregate(ups);
  for (int trial = 0; trial < 20; ++trial) {
    rng.shuffle(std::span(ups));
    CHECK(aggregate(ups) == ref);
  }
}

TEST_CASE("aggregate: errors") {
  const std::vector<std::pair<const Params*, std::size_t>> none;
  CHECK_THROWS_AS(aggregate(none), DataError);
  const auto a = constant(1);
  nn::ModelDims other = toy_dims();
  other.hidden = 9;
  const Params b(other);
  const std::pair<const Params*, std::size_t> mixed[] = {{&a, 1}, {&b, 1}};
  CHECK_THROWS_AS(aggregate(mixed), DataError);
  const std::pair<const Params*, std::size_t> empty[] = {{&a, 0}, {&a, 0}};
  CHECK_THROWS_AS(aggregate(empty), DataError);
}

TEST_CASE("proximal term") {
  Rng rng(3);
  SUBCASE("gradient gets mu * (w - anchor), and nothing at the anchor") {
    auto w = Params::random(toy_dims(), rng);
    const auto anchor = Params::random(toy_dims(), rng);
    nn::Gradients<float> g(toy_dims());
    g.flat().setConstant(0.5f);
    nn::AdamState<float> adam(toy_dims());
    const Params w0 = w;
    nn::apply_update(w, g, adam, 1e-3, nn::ProximalTerm<float>{&anchor, 0.1});
    for (Eigen::Index i = 0; i < g.flat().size(); ++i) {
      CHECK(g.flat()[i] == 0.5f + 0.1f * (w0.flat()[i] - anchor.flat()[i]));
    }
    nn::Gradients<float> g2(toy_dims());
    g2.flat().setConstant(0.5f);
    Params at = anchor;
    nn::apply_update(at, g2, adam, 1e-3, nn::ProximalTerm<float>{&anchor, 0.1});
    CHECK(g2.flat().isApproxToConstant(0.5f, 0.0f));
  }
  SUBCASE("quadratic local loss converges to the proximal minimizer") {
    // local loss 0.5 (w - a)^2, proximal 0.5 mu (w - g)^2 -> w* = (a + mu g) / (1 + mu)
    const double a = 2.0, anchor_value = -1.0, mu = 4.0;
    nn::ModelParams<double> w(toy_dims());
    nn::ModelParams<double> anchor(toy_dims());
    anchor.flat().setConstant(anchor_value);
    w.flat().setConstant(anchor_value);
    nn::AdamState<double> adam(toy_dims());
    nn::Gradients<double> g(toy_dims());
    for (int step = 0; step < 20'000; ++step) {
      g.flat() = w.flat().array() - a;
      nn::apply_update(w, g, adam, step < 10'000 ? 1e-2 : 1e-4, nn::ProximalTerm<double>{&anchor, mu});
    }
    const double expected = (a + mu * anchor_value) / (1 + mu);
    CHECK(std::abs(w.flat()[0] - expected) < 1e-3);
    CHECK(std::abs(w.flat()[0] - a) > 1.0);
  }
}

TEST_CASE("local training and federation") {
  const auto splits = testing::split_corpora({corpus(11), corpus(12, 3.0)});
  const auto silos = testing::make_silos(splits, {101, 202});
  Rng init_rng(4);
  const auto init = Params::random(toy_dims(), init_rng);
  const auto cfg = testing::toy_train_config();

  SUBCASE("mu = 0 trains exactly like plain fit") {
    auto local = cfg;
    local.seed = 7;
    const auto prox0 = silos[0].local_train(init, 2, 0.0, local);
    nn::TrainConfig plain = local;
    plain.max_epochs = 2;
    plain.patience = 2;
    nn::FitOptions<float> opts;
    opts.early_stopping = false;
    opts.restore_best = false;
    // the same windows the silo holds
    const auto standardizer = silos[0].standardizer();
    const auto train = standardizer.apply(std::span<const features::TrainingWindow>(splits[0].train));
    const auto val = standardizer.apply(std::span<const features::TrainingWindow>(splits[0].val));
    const auto ref = nn::fit<float>(init, train, val, plain, opts);
    CHECK(prox0.params == ref.params);
    CHECK(prox0.sample_count == splits[0].train.size());

    const auto prox = silos[0].local_train(init, 2, 0.5, local);
    CHECK_FALSE(prox.params == ref.params);
    CHECK(nn::l2_distance(prox.params, init) < nn::l2_distance(ref.params, init));
  }

  SUBCASE("FedProx with mu = 0 is FedAvg, bitwise") {
    auto avg = toy_fed(2);
    avg.algorithm = Algorithm::FedAvg;
    avg.mu_prox = 0.5;  // ignored by FedAvg
    auto prox = toy_fed(2);
    prox.mu_prox = 0.0;
    const auto a = run_federation(silos, avg, init);
    const auto b = run_federation(silos, prox, init);
    CHECK(a.global == b.global);
    CHECK(same_logs(a.rounds, b.rounds));
  }

  SUBCASE("determinism, byte accounting, drift and CSV rows") {
    auto fc = toy_fed(3);
    fc.workers = 1;
    const auto a = run_federation(silos, fc, toy_dims(), 9);
    fc.workers = 2;
    const auto b = run_federation(silos, fc, toy_dims(), 9);
    CHECK(a.global == b.global);
    CHECK(same_logs(a.rounds, b.rounds));

    const std::uint64_t msg = nn::serialized_bytes(toy_dims());
    for (std::size_t r = 0; r < a.rounds.size(); ++r) {
      CHECK(a.rounds[r].bytes_sent == (r + 1) * 2 * msg);
      CHECK(a.rounds[r].bytes_received == (r + 1) * 2 * msg);
      for (const auto& s : a.rounds[r].silos) {
        CHECK_FALSE(s.diverged);
        CHECK(s.drift > 0.0);
        CHECK(std::isfinite(s.drift));
      }
    }
    CHECK(nn::l2_distance(a.global, a.global) == 0.0);

    std::ostringstream csv;
    write_round_log_csv(csv, a.rounds);
    const std::string text = csv.str();
    CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 3 * (2 + 1));
  }

  SUBCASE("drift is measured against the broadcast model") {
    auto fc = toy_fed(1);
    const auto res = run_federation(silos, fc, init);
    auto local = fc.local;
    local.seed = local_seed(silos[1], 1);
    const auto up = silos[1].local_train(init, 1, fc.effective_mu(), local);
    CHECK(res.rounds[0].silos[1].drift == nn::l2_distance(up.params, init));
  }

  SUBCASE("at least two silos") {
    CHECK_THROWS_AS(run_federation(std::span<const Silo>(silos.data(), 1), toy_fed(1), init), ConfigError);
  }
}

TEST_CASE("identical silos match single-silo training restarted from the aggregate") {
  const auto data = corpus(21);
  const auto splits = testing::split_corpora({data, data});
  REQUIRE(splits[0].train.size() == splits[1].train.size());
  for (int n_silos : {2, 3}) {
    CAPTURE(n_silos);
    std::vector<features::TemporalSplit> copies(static_cast<std::size_t>(n_silos), splits[0]);
    const auto silos = testing::make_silos(copies, std::vector<std::uint64_t>(static_cast<std::size_t>(n_silos), 55));
    Rng init_rng(5);
    const auto init = Params::random(toy_dims(), init_rng);
    auto fc = toy_fed(3);
    fc.algorithm = Algorithm::FedAvg;
    const auto fedres = run_federation(silos, fc, init);

    Params w = init;
    for (int round = 1; round <= fc.rounds; ++round) {
      auto local = fc.local;
      local.seed = local_seed(silos[0], round);
      w = nn::deserialize_params(nn::serialize_params(silos[0].local_train(w, 1, 0.0, local).params));
      if (round == 1) {
        auto one = fc;
        one.rounds = 1;
        CHECK(run_federation(silos, one, init).global == w);
      }
    }
    CHECK(fedres.global == w);
  }
}

TEST_CASE("diverged silos are excluded") {
  auto splits = testing::split_corpora({corpus(31), corpus(32), corpus(33)});
  auto silos = testing::make_silos(splits, {1, 2, 3});
  // poison one silo's training labels after building the shared standardizer
  const auto standardizer = testing::shared_standardizer(splits);
  auto poisoned = splits[1];
  poisoned.train[0].label << std::numeric_limits<double>::infinity(), 0.0;
  silos[1] = Silo(1, poisoned, standardizer, 2);
  Rng init_rng(6);
  const auto init = Params::random(toy_dims(), init_rng);
  const auto res = run_federation(silos, toy_fed(2), init);
  for (const auto& r : res.rounds) {
    CHECK(r.silos[1].diverged);
    CHECK_FALSE(r.silos[0].diverged);
    CHECK(r.bytes_received == r.round * 2 * nn::serialized_bytes(toy_dims()));
  }
  CHECK(res.global.all_finite());

  for (int k : {0, 2}) silos[static_cast<std::size_t>(k)] = Silo(k, poisoned, standardizer, 2);
  CHECK_THROWS_AS(run_federation(silos, toy_fed(1), init), NumericError);
}

TEST_CASE("silo construction") {
  auto splits = testing::split_corpora({corpus(41), corpus(42)});
  const auto standardizer = testing::shared_standardizer(splits);
  auto empty_val = splits[0];
  empty_val.val.clear();
  CHECK_THROWS_AS(Silo(0, empty_val, standardizer, 1), DataError);
  const Silo s(3, splits[0], standardizer, 9);
  CHECK(s.id() == 3);
  CHECK(s.sample_count() == splits[0].train.size());
  CHECK(s.test_count() == splits[0].test.size());
}

TEST_CASE("personalization") {
  const auto splits = testing::split_corpora({corpus(51), corpus(52, 4.0)});
  const auto silos = testing::make_silos(splits, {5, 6});
  Rng init_rng(7);
  const auto global = Params::random(toy_dims(), init_rng);
  auto cfg = testing::toy_train_config();

  const auto res = silos[0].personalize(global, 10, 3, cfg);
  CHECK(silos[0].validation_loss(res.params) <= silos[0].validation_loss(global));
  CHECK(res.history.epochs.front().epoch == 0);

  // with a learning rate this large nothing improves on the starting point
  SUBCASE("no improvement stops after the baseline and three epochs") {
    auto bad = cfg;
    bad.lr = 5.0;
    bad.dropout_p = 0.0;
    const auto trained = silos[1].personalize(global, 10, 3, bad);
    REQUIRE(trained.history.best_epoch == 0);
    CHECK(trained.history.epochs.size() == 4);
    CHECK(trained.history.early_stopped);
    CHECK(trained.params == global);
    CHECK(personalize(global, silos[1], 10, 3, bad) == global);
  }
}

TEST_CASE("communication cost") {
  CommCostInputs in{4.15 * kGiB, 6.7 * kMiB, 2.2 * kMiB, 3, 70};
  const auto r = comm_cost(in);
  CHECK(r.centralized_bytes / kGiB == doctest::Approx(4.15 + 6.7 * 3 * 70 / 1024.0));
  CHECK(std::abs(r.centralized_bytes / kGiB - 5.52) <= 0.02);
  CHECK(std::abs(r.federated_bytes / kGiB - 0.90) <= 0.01);
  CHECK(std::abs(100 * r.reduction_fraction - 84) <= 1);

  in.rounds = 0;
  const auto zero = comm_cost(in);
  CHECK(zero.federated_bytes == 0.0);
  CHECK(zero.reduction_fraction == 1.0);

  // linear in rounds and silos
  const CommCostInputs base{1000, 10, 4, 2, 5};
  auto twice = base;
  twice.rounds = 10;
  CHECK(comm_cost(twice).federated_bytes == 2 * comm_cost(base).federated_bytes);
  CHECK(comm_cost(twice).centralized_bytes - 1000 == 2 * (comm_cost(base).centralized_bytes - 1000));
  CHECK(comm_cost(base).centralized_bytes == 1000 + 10 * 2 * 5);
  CHECK(comm_cost(base).federated_bytes == 4 * 2 * 2 * 5);

  CHECK_THROWS_AS(comm_cost(CommCostInputs{0, 0, 1, 3, 70}), DataError);
  CHECK_THROWS_AS(comm_cost(CommCostInputs{-1, 0, 1, 3, 70}), ConfigError);

  const auto j = to_json(r);
  CHECK(j["reduction_percent"].get<double>() == doctest::Approx(100 * r.reduction_fraction));
}

TEST_CASE("fed config json") {
  const auto c = fed_config_from_json(nlohmann::json{{"rounds", 5}, {"algorithm", "fedavg"}, {"mu_prox", {1e-4, 1e-3}}});
  CHECK(c.rounds == 5);
  CHECK(c.algorithm == Algorithm::FedAvg);
  CHECK(c.effective_mu() == 0.0);
  const auto back = fed_config_from_json(to_json(c));
  CHECK(back.rounds == 5);
  CHECK_THROWS_AS(fed_config_from_json(nlohmann::json{{"algorithm", "scaffold"}}), ConfigError);
  CHECK_THROWS_AS(fed_config_from_json(nlohmann::json{{"rounds", 0}}), ConfigError);
}
