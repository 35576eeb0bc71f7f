#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "mpt/mpt.hpp"

using namespace mpt;
using test_helpers::assignment_2htm;
using test_helpers::load_fixture;
using test_helpers::naive_probabilities;
using test_helpers::random_assignment;

TEST_CASE("certain detection routes everything to the top category", "[model]") {
  auto model = load_fixture("2htm.mpt");
  auto params = assignment_2htm(1.0, 0.3, 0.5, {0, 0, 1}, {1. / 3, 1. / 3, 1. / 3},
                                {1. / 3, 1. / 3, 1. / 3});
  auto probs = category_probabilities(model, params);
  CHECK(probs["old"]["old_high"] == Catch::Approx(1.0).margin(1e-15));
  CHECK(probs["old"]["old_low"] == Catch::Approx(0.0).margin(1e-15));
  CHECK(probs["old"]["new_med"] == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("hand-multiplied branch products at an even split", "[model]") {
  auto model = load_fixture("2htm.mpt");
  auto params = assignment_2htm(0.5, 0.5, 0.5, {1. / 3, 1. / 3, 1. / 3},
                                {1. / 3, 1. / 3, 1. / 3}, {1. / 3, 1. / 3, 1. / 3});
  auto probs = category_probabilities(model, params);
  // old-rated: 0.5/3 + 0.5*0.5/3 = 1/4; new-rated: 0.5*0.5/3 = 1/12
  for (const auto& cat : {"old_low", "old_med", "old_high"})
    CHECK(probs["old"][cat] == Catch::Approx(0.25).margin(1e-12));
  for (const auto& cat : {"new_low", "new_med", "new_high"})
    CHECK(probs["old"][cat] == Catch::Approx(1.0 / 12).margin(1e-12));
  // exhaustive branch enumeration oracle agrees everywhere
  auto oracle = naive_probabilities(model, params);
  for (const auto& [tree, cats] : oracle)
    for (const auto& [cat, p] : cats) CHECK(probs[tree][cat] == Catch::Approx(p).margin(1e-14));
}

TEST_CASE("simplex identity model maps members onto categories", "[model]") {
  auto parsed = parse_model(
      "simplex e = e1 e2 e3\n"
      "tree t\n"
      "  category c1 : e1\n"
      "  category c2 : e2\n"
      "  category c3 : e3\n");
  REQUIRE(parsed.ok());
  ParamAssignment params{{"e1", 0.5}, {"e2", 0.3}, {"e3", 0.2}};
  auto probs = category_probabilities(*parsed.model, params);
  CHECK(probs["t"]["c1"] == 0.5);
  CHECK(probs["t"]["c2"] == 0.3);
  CHECK(probs["t"]["c3"] == 0.2);
}

TEST_CASE("category probabilities reject bad assignments", "[model]") {
  auto model = load_fixture("2htm.mpt");
  auto params = assignment_2htm(0.5, 0.5, 0.5, {1. / 3, 1. / 3, 1. / 3},
                                {1. / 3, 1. / 3, 1. / 3}, {1. / 3, 1. / 3, 1. / 3});
  SECTION("unknown parameter") {
    params["zzz"] = 0.5;
    CHECK_THROWS_AS(category_probabilities(model, params), std::invalid_argument);
  }
  SECTION("outside unit interval") {
    params["D_o"] = 1.5;
    CHECK_THROWS_AS(category_probabilities(model, params), std::invalid_argument);
  }
  SECTION("simplex does not sum to one") {
    params["s_l"] = 0.9;
    CHECK_THROWS_AS(category_probabilities(model, params), std::invalid_argument);
  }
}

TEST_CASE("probabilities sum to one on random assignments", "[model]") {
  for (const char* name : {"2htm.mpt", "2htm_r.mpt"}) {
    auto model = load_fixture(name);
    Rng rng(42);
    for (int i = 0; i < 300; ++i) {
      auto probs = category_probabilities(model, random_assignment(model, rng));
      for (const auto& [tree, cats] : probs) {
        double sum = 0.0;
        for (const auto& [_, p] : cats) sum += p;
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-10));
      }
    }
  }
}

TEST_CASE("binary conversion follows the stick-breaking chain", "[model]") {
  auto parsed = parse_model(
      "simplex e = a b c\n"
      "tree t\n"
      "  category c1 : a\n"
      "  category c2 : b\n"
      "  category c3 : c\n");
  REQUIRE(parsed.ok());
  auto conv = to_binary(*parsed.model);
  REQUIRE(conv.model.groups.empty());
  REQUIRE(conv.sticks.size() == 1);
  REQUIRE(conv.sticks[0].binary_params.size() == 2);

  ParamAssignment original{{"a", 0.5}, {"b", 0.3}, {"c", 0.2}};
  auto binary = conv.forward(original);
  // beta_1 = a, beta_2 = b / (1 - a)
  CHECK(binary.at(conv.sticks[0].binary_params[0]) == Catch::Approx(0.5).margin(1e-15));
  CHECK(binary.at(conv.sticks[0].binary_params[1]) == Catch::Approx(0.6).margin(1e-15));

  Rng rng(7);
  for (int i = 0; i < 100; ++i) {
    auto params = random_assignment(*parsed.model, rng);
    auto orig_probs = category_probabilities(*parsed.model, params);
    auto bin_probs = category_probabilities(conv.model, conv.forward(params));
    for (const auto& [tree, cats] : orig_probs)
      for (const auto& [cat, p] : cats)
        REQUIRE(bin_probs[tree][cat] == Catch::Approx(p).margin(1e-12));
  }
}

TEST_CASE("binary conversion handles degenerate prefixes and binary models", "[model]") {
  auto parsed = parse_model(
      "simplex e = a b c\n"
      "tree t\n"
      "  category c1 : a\n"
      "  category c2 : b\n"
      "  category c3 : c\n");
  REQUIRE(parsed.ok());
  auto conv = to_binary(*parsed.model);
  ParamAssignment degenerate{{"a", 1.0}, {"b", 0.0}, {"c", 0.0}};
  auto binary = conv.forward(degenerate);
  CHECK(binary.at(conv.sticks[0].binary_params[1]) == 0.0);  // 0/0 resolves to 0
  auto probs = category_probabilities(conv.model, binary);
  CHECK(probs["t"]["c1"] == Catch::Approx(1.0).margin(1e-15));

  // already-binary model is a fixed point
  auto binary_only = parse_model(
      "param p\n"
      "tree t\n"
      "  category heads : p\n"
      "  category tails : ~p\n");
  REQUIRE(binary_only.ok());
  auto conv2 = to_binary(*binary_only.model);
  CHECK(conv2.model == *binary_only.model);
  CHECK(conv2.sticks.empty());
}

TEST_CASE("full-model binary equivalence on both fixtures", "[model]") {
  for (const char* name : {"2htm.mpt"}) {
    auto model = load_fixture(name);
    auto conv = to_binary(model);
    Rng rng(99);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      auto params = random_assignment(model, rng);
      auto orig = naive_probabilities(model, params);
      auto bin = category_probabilities(conv.model, conv.forward(params));
      for (const auto& [tree, cats] : orig)
        for (const auto& [cat, p] : cats) worst = std::max(worst, std::abs(bin[tree][cat] - p));
    }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("simulation is deterministic and exact in totals", "[model]") {
  auto model = load_fixture("2htm.mpt");
  auto params = assignment_2htm(0.7, 0.5, 0.4, {0.2, 0.3, 0.5}, {0.5, 0.3, 0.2}, {0.6, 0.25, 0.15});
  std::map<std::string, std::int64_t> n{{"old", 1000}, {"new", 1500}};
  auto a = simulate(model, params, n, 2024);
  auto b = simulate(model, params, n, 2024);
  CHECK(a == b);
  for (const auto& [tree, total] : n) {
    std::int64_t sum = 0;
    for (const auto& [_, count] : a.at(tree)) sum += count;
    CHECK(sum == total);
  }
  auto c = simulate(model, params, n, 2025);
  CHECK(a != c);
}

TEST_CASE("degenerate simulation puts all mass on one category", "[model]") {
  auto model = load_fixture("2htm.mpt");
  auto params = assignment_2htm(1.0, 1.0, 0.5, {0, 0, 1}, {1, 0, 0}, {1, 0, 0});
  auto data = simulate(model, params, {{"old", 100}, {"new", 100}}, 5);
  CHECK(data["old"]["old_high"] == 100);
  CHECK(data["new"]["new_high"] == 100);
}

TEST_CASE("uniform six-category simulation stays within five sigma", "[model]") {
  auto parsed = parse_model(
      "simplex e = e1 e2 e3 e4 e5 e6\n"
      "tree t\n"
      "  category c1 : e1\n  category c2 : e2\n  category c3 : e3\n"
      "  category c4 : e4\n  category c5 : e5\n  category c6 : e6\n");
  REQUIRE(parsed.ok());
  ParamAssignment params;
  for (int i = 1; i <= 6; ++i) params["e" + std::to_string(i)] = 1.0 / 6.0;
  auto data = simulate(*parsed.model, params, {{"t", 6000}}, 31337);
  const double sigma = std::sqrt(6000.0 * (1.0 / 6) * (5.0 / 6));  // ~28.9
  for (const auto& [_, count] : data["t"])
    CHECK(std::abs(static_cast<double>(count) - 1000.0) < 5.0 * sigma);
}

TEST_CASE("validate accepts the fixtures", "[model]") {
  CHECK(validate(load_fixture("2htm.mpt")).empty());
  CHECK(validate(load_fixture("2htm_r.mpt")).empty());
}

TEST_CASE("validate reports incomplete trees with their name", "[model]") {
  MptModel m;
  m.parameters = {{"p", ParamKind::binary, ""}};
  m.trees = {"bad"};
  m.categories["bad"] = {"only"};
  m.branches = {{"bad", "only", {FactorTerm::direct("p")}}};  // P(only) = p != 1
  auto diags = validate(m);
  REQUIRE_FALSE(diags.empty());
  bool mentions_tree = false;
  for (const auto& d : diags)
    if (d.find("bad") != std::string::npos && d.find("sum") != std::string::npos)
      mentions_tree = true;
  CHECK(mentions_tree);
}

TEST_CASE("validate rejects orders on binary parameters", "[model]") {
  auto model = load_fixture("2htm.mpt");
  OrderSpec spec;
  spec.kind = OrderSpec::Kind::chain;
  spec.group = "D_o";
  spec.chain = {"s_l", "s_h"};
  model.orders.push_back(spec);
  auto diags = validate(model);
  REQUIRE_FALSE(diags.empty());
  bool found = false;
  for (const auto& d : diags)
    if (d.find("order constraints apply to simplex members only") != std::string::npos)
      found = true;
  CHECK(found);
}

TEST_CASE("validate flags unreachable categories and complement misuse", "[model]") {
  auto parsed = parse_model(
      "param p\n"
      "tree t\n"
      "  category a : p\n"
      "  category b : ~p\n");
  REQUIRE(parsed.ok());
  auto model = *parsed.model;
  model.categories["t"].push_back("ghost");
  auto diags = validate(model);
  REQUIRE_FALSE(diags.empty());
  CHECK(diags[0].find("ghost") != std::string::npos);
}
