#include "lab/extract/extract.hpp"
#include "lab/extract/judge.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <doctest.h>

#include <thread>

using namespace lab;
using extract::extract_answer;
using extract::Method;

TEST_CASE("pattern grammar: canonical answer sentence") {
    auto r = extract_answer("some reasoning went here . The correct answer is (B).");
    REQUIRE(r.label.has_value());
    CHECK(*r.label == "B");
    CHECK(r.method == Method::pattern);

    auto spaced = extract_answer("The correct answer is ( C ) .");
    REQUIRE(spaced.label.has_value());
    CHECK(*spaced.label == "C");
}

TEST_CASE("pattern grammar: last match wins") {
    auto r = extract_answer("I think A, but actually the correct answer is (D).");
    REQUIRE(r.label.has_value());
    CHECK(*r.label == "D");

    auto multi = extract_answer("the answer is A . no wait , the answer is B .");
    REQUIRE(multi.label.has_value());
    CHECK(*multi.label == "B");
}

TEST_CASE("pattern grammar: no-match and near-miss cases") {
    CHECK(extract_answer("no label here").method == Method::none);
    CHECK_FALSE(extract_answer("").label.has_value());
    CHECK_FALSE(extract_answer("the answer is Elephant").label.has_value());
    CHECK_FALSE(extract_answer("the answer is 42").label.has_value());
}

TEST_CASE("pattern grammar: trailing variants") {
    auto parens = extract_answer("after deliberation : ( A )");
    REQUIRE(parens.label.has_value());
    CHECK(*parens.label == "A");

    auto bare = extract_answer("final verdict : C");
    REQUIRE(bare.label.has_value());
    CHECK(*bare.label == "C");

    auto lowercase = extract_answer("the answer is b");
    REQUIRE(lowercase.label.has_value());
    CHECK(*lowercase.label == "B");
}

TEST_CASE("extract_answer is total and deterministic") {
    const std::string junk = "(((( ??? a B c D my answer is is is";
    auto a = extract_answer(junk);
    auto b = extract_answer(junk);
    CHECK(a.label == b.label);
    CHECK(a.method == b.method);
}

TEST_CASE("mock judge resolves by last whole-token choice mention") {
    std::map<std::string, std::string> choices = {
        {"A", "4"}, {"B", "2"}, {"C", "0"}, {"D", "6"}};
    auto r = extract::mock_judge(choices, "3 plus 5 is 1 . 1 times 2 is 2 .");
    REQUIRE(r.label.has_value());
    CHECK(*r.label == "B");
    CHECK(r.method == Method::judge);

    CHECK_FALSE(extract::mock_judge(choices, "nothing relevant").label.has_value());
    // Token-boundary match: "12" must not count as "2".
    CHECK_FALSE(extract::mock_judge(choices, "value 12 appears").label.has_value());
}

TEST_CASE("extractor pipeline never consults the judge when the pattern hits") {
    extract::Extractor ex;
    ex.mode = extract::JudgeMode::mock;
    std::map<std::string, std::string> choices = {
        {"A", "4"}, {"B", "2"}, {"C", "0"}, {"D", "6"}};
    // "4" (choice A) appears, but the pattern already matched (D).
    auto r = ex.extract("q", choices, "4 is tempting . The correct answer is ( D ) .");
    REQUIRE(r.label.has_value());
    CHECK(*r.label == "D");
    CHECK(r.method == Method::pattern);
}

TEST_CASE("remote judge round-trip over HTTP") {
    httplib::Server server;
    server.Post("/judge", [](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body);
        REQUIRE(body.contains("question"));
        REQUIRE(body.contains("choices"));
        REQUIRE(body.contains("model_output"));
        REQUIRE(body.contains("instruction"));
        res.set_content(nlohmann::json{{"label", "The answer: (C)"}}.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&server] { server.listen_after_bind(); });
    server.wait_until_ready();

    extract::JudgeClient client;
    client.endpoint = "127.0.0.1:" + std::to_string(port);
    std::map<std::string, std::string> choices = {{"A", "x"}, {"B", "y"}, {"C", "z"}, {"D", "w"}};
    auto r = extract::judge_answer("q", choices, "unparseable", client);
    REQUIRE(r.label.has_value());
    CHECK(*r.label == "C");
    CHECK(r.method == Method::judge);

    server.stop();
    server_thread.join();
}

TEST_CASE("unreachable judge endpoint raises judge-unavailable") {
    extract::JudgeClient client;
    client.endpoint = "127.0.0.1:1";  // nothing listens there
    client.timeout_seconds = 0.2;
    client.retries = 0;
    std::map<std::string, std::string> choices = {{"A", "x"}, {"B", "y"}, {"C", "z"}, {"D", "w"}};
    CHECK_THROWS_AS(extract::judge_answer("q", choices, "text", client),
                    extract::JudgeUnavailableError);
}

TEST_CASE("malformed judge reply raises judge-parse") {
    httplib::Server server;
    server.Post("/judge", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("not json at all", "text/plain");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread server_thread([&server] { server.listen_after_bind(); });
    server.wait_until_ready();

    extract::JudgeClient client;
    client.endpoint = "127.0.0.1:" + std::to_string(port);
    std::map<std::string, std::string> choices = {{"A", "x"}, {"B", "y"}, {"C", "z"}, {"D", "w"}};
    CHECK_THROWS_AS(extract::judge_answer("q", choices, "text", client), extract::JudgeParseError);

    server.stop();
    server_thread.join();
}
