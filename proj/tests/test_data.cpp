#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "edulm/data.hpp"
#include "edulm/error.hpp"
#include "edulm/io.hpp"
#include "edulm/log.hpp"
#include "warning_capture.hpp"

using namespace edulm;

namespace {

TaskDataset numbered_dataset(std::size_t n, std::size_t courses = 1) {
    TaskDataset d;
    for (std::size_t i = 0; i < n; ++i) {
        d.examples.push_back({"post " + std::to_string(i), static_cast<std::int32_t>(i % 2),
                              "c" + std::to_string(i % courses)});
    }
    return d;
}

}  // namespace

TEST_CASE("load_posts reads JSONL in file order") {
    const std::string text =
        R"({"id":"a","text":"Where is the quiz?","sentiment":1,"confusion":4.5,"urgency":2})"
        "\n"
        R"({"id":"b","text":"Thanks!","sentiment":6,"confusion":1,"urgency":1,"course_id":"cs101"})"
        "\n\n"
        R"({"id":"c","text":"help","sentiment":3.999,"confusion":7,"urgency":4})"
        "\n";
    const auto posts = parse_posts(text);
    REQUIRE(posts.size() == 3);
    CHECK(posts[0].id == "a");
    CHECK(posts[0].confusion == 4.5);
    CHECK_FALSE(posts[0].course_id);
    CHECK(posts[1].course_id == std::optional<std::string>("cs101"));
    CHECK(posts[2].sentiment == 3.999);

    const auto path = std::filesystem::temp_directory_path() / "edulm_posts_test.jsonl";
    save_posts(posts, path);
    CHECK(load_posts(path) == posts);
    std::filesystem::remove(path);
}

TEST_CASE("load_posts error reporting") {
    SUBCASE("out-of-range score is a validation error citing the range") {
        const std::string text = R"({"id":"a","text":"x","sentiment":0.5,"confusion":1,"urgency":1})";
        try {
            parse_posts(text, "posts.jsonl");
            FAIL("accepted a 0.5 score");
        } catch (const ValidationError &e) {
            CHECK(std::string(e.what()).find("[1,7]") != std::string::npos);
            CHECK(std::string(e.what()).find("posts.jsonl:1") != std::string::npos);
        }
    }
    SUBCASE("malformed line names its line number") {
        const std::string text = R"({"id":"a","text":"x","sentiment":1,"confusion":1,"urgency":1})"
                                 "\n{not json\n";
        try {
            parse_posts(text, "f");
            FAIL("accepted malformed JSON");
        } catch (const ValidationError &) {
            FAIL("malformed JSON must not be reported as a validation error");
        } catch (const InputError &e) {
            CHECK(std::string(e.what()).find("f:2") != std::string::npos);
        }
    }
    SUBCASE("missing fields, wrong types and empty text") {
        CHECK_THROWS_AS(parse_posts(R"({"id":"a","text":"x","sentiment":1,"confusion":1})"), InputError);
        CHECK_THROWS_AS(parse_posts(R"({"id":"a","text":"x","sentiment":"1","confusion":1,"urgency":1})"),
                        InputError);
        CHECK_THROWS_AS(parse_posts(R"({"id":"a","text":"   ","sentiment":1,"confusion":1,"urgency":1})"),
                        ValidationError);
        CHECK_THROWS_AS(parse_posts("[1,2]"), InputError);
    }
    SUBCASE("every bad record is reported") {
        const std::string text = R"({"id":"a","text":"x","sentiment":9,"confusion":1,"urgency":1})"
                                 "\n"
                                 R"({"id":"b","text":"x","sentiment":1,"confusion":1,"urgency":1})"
                                 "\n"
                                 R"({"id":"c","text":"x","sentiment":1,"confusion":0,"urgency":1})";
        try {
            parse_posts(text, "f");
            FAIL("accepted bad records");
        } catch (const ValidationError &e) {
            const std::string what = e.what();
            CHECK(what.find("f:1") != std::string::npos);
            CHECK(what.find("f:3") != std::string::npos);
            CHECK(what.find("f:2") == std::string::npos);
        }
    }
    SUBCASE("empty file gives an empty list and a warning") {
        WarningCapture capture;
        CHECK(parse_posts("").empty());
        CHECK(capture.messages.size() == 1);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(load_posts("/nonexistent/posts.jsonl"), InputError); }
}

TEST_CASE("CSV adapter maps external headers") {
    const std::string csv =
        "PostID,Body,Sent,Conf,Urg,Course\n"
        "1,\"Hello, \"\"world\"\"\",4,2,1,x\n"
        "2,\"multi\nline\",1,1,7,\n";
    const CsvColumnMap map{{"id", "PostID"}, {"text", "Body"},    {"sentiment", "Sent"},
                           {"confusion", "Conf"}, {"urgency", "Urg"}, {"course_id", "Course"}};
    const auto posts = parse_posts_csv(csv, map);
    REQUIRE(posts.size() == 2);
    CHECK(posts[0].text == "Hello, \"world\"");
    CHECK(posts[0].course_id == std::optional<std::string>("x"));
    CHECK(posts[1].text == "multi\nline");
    CHECK_FALSE(posts[1].course_id);
    CHECK(posts[1].urgency == 7.0);

    CHECK_THROWS_AS(parse_posts_csv("a,b\n1,2\n", map), InputError);
    CHECK_THROWS_AS(parse_posts_csv(csv, {{"bogus", "x"}}), ConfigError);
    CHECK_THROWS_AS(parse_posts_csv("PostID,Body,Sent,Conf,Urg\n1,x,8,1,1\n", map), ValidationError);
}

TEST_CASE("binarize") {
    CHECK(binarize(4.0) == 1);
    CHECK(binarize(3.999) == 0);
    CHECK(binarize(7.0) == 1);
    CHECK(binarize(1.0) == 0);
    for (int milli = 1000; milli <= 7000; ++milli) {
        const double score = milli / 1000.0;
        CHECK(binarize(score) == (milli >= 4000 ? 1 : 0));
    }
    CHECK_THROWS_AS(binarize(0.999), ValidationError);
    CHECK_THROWS_AS(binarize(7.001), ValidationError);
}

TEST_CASE("make_task_dataset labels by threshold") {
    std::vector<LabeledPost> posts{{"a", "x", 4.0, 1.0, 3.5, std::nullopt}, {"b", "y", 1.0, 6.0, 4.5, "c1"}};
    const auto urgency = make_task_dataset(posts, Task::urgency);
    CHECK(urgency.examples[0].label == 0);
    CHECK(urgency.examples[1].label == 1);
    CHECK(urgency.examples[1].course_id == "c1");
    CHECK(make_task_dataset(posts, Task::sentiment).examples[0].label == 1);
    CHECK(make_task_dataset(posts, Task::confusion).positives() == 1);
    CHECK(parse_task("urgency") == Task::urgency);
    CHECK_THROWS_AS(parse_task("topic"), ConfigError);
}

TEST_CASE("split sizes, partition and determinism") {
    CHECK(split_dataset(numbered_dataset(300), 1).train.examples.size() == 200);
    CHECK(split_dataset(numbered_dataset(300), 1).test.examples.size() == 100);

    {
        WarningCapture capture;
        const auto one = split_dataset(numbered_dataset(1), 3);
        CHECK(one.train.examples.empty());
        CHECK(one.test.examples.size() == 1);
        CHECK(capture.messages.size() == 1);
    }

    for (const bool stratify : {false, true}) {
        for (std::size_t n = 1; n <= 120; ++n) {
            WarningCapture quiet;
            const auto d = numbered_dataset(n, 4);
            const auto s = split_dataset(d, n, {}, stratify);
            CHECK(s.train.examples.size() == 2 * n / 3);
            std::multiset<std::string> seen;
            for (const auto *part : {&s.train, &s.test}) {
                for (const auto &e : part->examples) {
                    seen.insert(e.text);
                }
            }
            std::multiset<std::string> all;
            for (const auto &e : d.examples) {
                all.insert(e.text);
            }
            CHECK(seen == all);
            const auto again = split_dataset(d, n, {}, stratify);
            CHECK(again.train.examples.size() == s.train.examples.size());
            for (std::size_t i = 0; i < s.train.examples.size(); ++i) {
                CHECK(again.train.examples[i].text == s.train.examples[i].text);
            }
        }
    }
    const auto d = numbered_dataset(90);
    CHECK(split_dataset(d, 1).train.examples[0].text != split_dataset(d, 2).train.examples[0].text);
    CHECK_THROWS_AS(split_dataset(TaskDataset{}, 1), InputError);
    CHECK_THROWS_AS(split_dataset(d, 1, {4, 3}), ConfigError);
}

TEST_CASE("stratified split keeps course proportions") {
    const auto d = numbered_dataset(300, 3);
    const auto s = split_dataset(d, 5, {}, true);
    std::map<std::string, std::size_t> per_course;
    for (const auto &e : s.train.examples) {
        ++per_course[e.course_id];
    }
    for (const auto &[course, count] : per_course) {
        CHECK(count >= 66);
        CHECK(count <= 67);
    }
}

TEST_CASE("synthetic corpus") {
    const auto corpus = synth_corpus({100, 0.5, Theme::education, 40}, 7);
    REQUIRE(corpus.posts.size() == 100);
    CHECK(corpus.unlabeled.size() == 40);
    for (const Task task : kAllTasks) {
        CAPTURE(task_name(task));
        const auto d = make_task_dataset(corpus.posts, task);
        CHECK(d.positives() == 50);
        for (std::size_t i = 0; i < corpus.posts.size(); ++i) {
            // the planted keyword decides the label and the score side
            CHECK(keyword_oracle(corpus.posts[i].text, task) == d.examples[i].label);
            CHECK((corpus.posts[i].score(task) >= 4.0) == (d.examples[i].label == 1));
        }
    }
    for (const auto &p : corpus.posts) {
        CHECK_NOTHROW(validate_post(p));
    }

    const auto again = synth_corpus({100, 0.5, Theme::education, 40}, 7);
    CHECK(again.posts == corpus.posts);
    CHECK(again.unlabeled == corpus.unlabeled);
    CHECK(synth_corpus({100, 0.5, Theme::education, 40}, 8).posts != corpus.posts);

    const auto skewed = synth_corpus({101, 0.3, Theme::general, 0}, 1);
    CHECK(make_task_dataset(skewed.posts, Task::urgency).positives() == 30);
    CHECK(skewed.posts[0].text != corpus.posts[0].text);

    CHECK_THROWS_AS(synth_corpus({0, 0.5, Theme::education, 0}, 1), ConfigError);
    CHECK_THROWS_AS(synth_corpus({10, 1.0, Theme::education, 0}, 1), ConfigError);
    CHECK(parse_theme("general") == Theme::general);
}
