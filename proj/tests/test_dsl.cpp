#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "mpt/mpt.hpp"

using namespace mpt;
using test_helpers::load_fixture;

TEST_CASE("fixture structure matches the published tree", "[dsl]") {
  auto model = load_fixture("2htm.mpt");
  int binary = 0;
  for (const auto& p : model.parameters)
    if (p.kind == ParamKind::binary) ++binary;
  CHECK(binary == 3);
  CHECK(model.groups.size() == 3);
  for (const auto& g : model.groups) CHECK(g.members.size() == 3);
  CHECK(model.trees.size() == 2);
  int categories = 0;
  for (const auto& [_, cats] : model.categories) categories += static_cast<int>(cats.size());
  CHECK(categories == 12);
  CHECK(model.free_parameter_count() == 9);
}

TEST_CASE("empty input reports no trees", "[dsl]") {
  auto result = parse_model("");
  REQUIRE_FALSE(result.ok());
  REQUIRE(result.errors.size() == 1);
  CHECK(result.errors[0].message == "no trees declared");
}

TEST_CASE("order chains normalize to dominant-first", "[dsl]") {
  auto result = parse_model(
      "simplex s = s_l s_m s_h\n"
      "order s: s_l <= s_m <= s_h\n"
      "tree t\n"
      "  category a : s_l\n  category b : s_m\n  category c : s_h\n");
  REQUIRE(result.ok());
  REQUIRE(result.model->orders.size() == 1);
  const auto& spec = result.model->orders[0];
  CHECK(spec.kind == OrderSpec::Kind::chain);
  CHECK(spec.chain == std::vector<std::string>{"s_h", "s_m", "s_l"});

  auto descending = parse_model(
      "simplex s = s_l s_m s_h\n"
      "order s: s_h >= s_m >= s_l\n"
      "tree t\n"
      "  category a : s_l\n  category b : s_m\n  category c : s_h\n");
  REQUIRE(descending.ok());
  CHECK(descending.model->orders[0] == spec);
}

TEST_CASE("partial orders parse into dominance pairs", "[dsl]") {
  auto result = parse_model(
      "simplex g = a b c d\n"
      "partial g: a >= b, a >= c, d <= a\n"
      "tree t\n"
      "  category w : a\n  category x : b\n  category y : c\n  category z : d\n");
  REQUIRE(result.ok());
  const auto& spec = result.model->orders[0];
  CHECK(spec.kind == OrderSpec::Kind::partial);
  using P = std::pair<std::string, std::string>;
  CHECK(spec.pairs == std::vector<P>{{"a", "b"}, {"a", "c"}, {"a", "d"}});
}

TEST_CASE("syntax errors carry spans and do not stop the parse", "[dsl]") {
  auto result = parse_model(
      "param ok\n"
      "param 123bad\n"
      "simplex s =\n"
      "tree t\n"
      "  category a : ok*\n"
      "  category b : ~ok\n");
  REQUIRE_FALSE(result.ok());
  REQUIRE(result.errors.size() >= 3);
  for (const auto& e : result.errors) {
    CHECK(e.span.line >= 1);
    CHECK(e.span.col_begin >= 1);
    CHECK(e.span.col_end >= e.span.col_begin);
    CHECK_FALSE(e.message.empty());
  }
  CHECK(result.errors[0].span.line == 2);
}

TEST_CASE("semantic errors: unknown references and duplicates", "[dsl]") {
  auto result = parse_model(
      "param p\n"
      "param p\n"
      "simplex s = a b\n"
      "order s: a >= zz\n"
      "tree t\n"
      "  category x : p*qq + ~a\n"
      "  category y : ~p*a + b\n");
  REQUIRE_FALSE(result.ok());
  bool dup = false, unknown_member = false, unknown_param = false, bad_complement = false;
  for (const auto& e : result.errors) {
    if (e.message.find("duplicate name 'p'") != std::string::npos) dup = true;
    if (e.message.find("'zz' is not a member") != std::string::npos) unknown_member = true;
    if (e.message.find("unknown parameter 'qq'") != std::string::npos) unknown_param = true;
    if (e.message.find("'~a' is only legal on binary") != std::string::npos) bad_complement = true;
  }
  CHECK(dup);
  CHECK(unknown_member);
  CHECK(unknown_param);
  CHECK(bad_complement);
}

TEST_CASE("order on a binary parameter is rejected with the documented message", "[dsl]") {
  auto result = parse_model(
      "param p\n"
      "simplex s = a b\n"
      "order p: a >= b\n"
      "tree t\n"
      "  category x : p*a + ~p\n"
      "  category y : p*b\n");
  REQUIRE_FALSE(result.ok());
  bool found = false;
  for (const auto& e : result.errors)
    if (e.message == "order constraints apply to simplex members only") found = true;
  CHECK(found);
}

TEST_CASE("overlapping constraints on one group are rejected", "[dsl]") {
  auto result = parse_model(
      "simplex s = a b c\n"
      "order s: a >= b\n"
      "order s: b >= c\n"
      "tree t\n"
      "  category x : a\n  category y : b\n  category z : c\n");
  REQUIRE_FALSE(result.ok());
  bool found = false;
  for (const auto& e : result.errors)
    if (e.message.find("overlapping order constraints") != std::string::npos) found = true;
  CHECK(found);
}

TEST_CASE("chains over a strict subset are legal", "[dsl]") {
  auto result = parse_model(
      "simplex s = a b c d e f\n"
      "order s: a >= b >= c\n"
      "tree t\n"
      "  category x : a\n  category y : b\n  category z : c\n"
      "  category u : d\n  category v : e\n  category w : f\n");
  REQUIRE(result.ok());
  CHECK(result.model->orders[0].chain == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("round trip is the identity on fixtures", "[dsl]") {
  for (const char* name : {"2htm.mpt", "2htm_r.mpt"}) {
    auto model = load_fixture(name);
    auto reparsed = parse_model(serialize_model(model));
    REQUIRE(reparsed.ok());
    CHECK(*reparsed.model == model);
  }
}

TEST_CASE("rewritten models round trip through the text format", "[dsl]") {
  auto model = load_fixture("2htm_r.mpt");
  auto transformed = transform_model(model);
  auto text = serialize_model(transformed.model);
  auto reparsed = parse_model(text);
  REQUIRE(reparsed.ok());
  CHECK(*reparsed.model == transformed.model);
  CHECK(validate(*reparsed.model).empty());
}

TEST_CASE("comments are lossy but harmless", "[dsl]") {
  auto with_comments = parse_model(
      "# heading comment\n"
      "param p  # trailing\n"
      "tree t\n"
      "  category a : p\n"
      "  category b : ~p\n");
  REQUIRE(with_comments.ok());
  auto text = serialize_model(*with_comments.model);
  CHECK(text.find('#') == std::string::npos);
  auto reparsed = parse_model(text);
  REQUIRE(reparsed.ok());
  CHECK(*reparsed.model == *with_comments.model);
}

TEST_CASE("CRLF and LF parse identically", "[dsl]") {
  std::string lf = "param p\ntree t\n  category a : p\n  category b : ~p\n";
  std::string crlf = "param p\r\ntree t\r\n  category a : p\r\n  category b : ~p\r\n";
  auto a = parse_model(lf);
  auto b = parse_model(crlf);
  REQUIRE(a.ok());
  REQUIRE(b.ok());
  CHECK(*a.model == *b.model);
}

TEST_CASE("constant factors parse as exact rationals", "[dsl]") {
  auto result = parse_model(
      "simplex w = w1 w2\n"
      "tree t\n"
      "  category a : w1 + w2*1/2\n"
      "  category b : w2*1/2\n");
  REQUIRE(result.ok());
  bool found = false;
  for (const auto& branch : result.model->branches)
    for (const auto& f : branch.factors)
      if (f.kind == FactorKind::constant) {
        CHECK(f.value == Rational(1, 2));
        found = true;
      }
  CHECK(found);
  auto bad = parse_model(
      "simplex w = w1 w2\n"
      "tree t\n  category a : w1*3/2 + w2\n");
  CHECK_FALSE(bad.ok());
}
