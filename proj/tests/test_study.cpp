#include <gtest/gtest.h>
#include <httplib.h>

#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "cgiqa/error.hpp"
#include "cgiqa/image.hpp"
#include "cgiqa/study.hpp"
#include "test_util.hpp"

namespace cgiqa {
namespace {

using testing::TempDir;
using json = nlohmann::json;

std::vector<std::string> stimuli(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("img" + std::to_string(i) + ".png");
  return out;
}

CreateSessionRequest request(std::vector<std::string> stim, std::uint64_t seed) {
  CreateSessionRequest r;
  r.stimuli = std::move(stim);
  r.seed = seed;
  return r;
}

StudyConfig config(const TempDir& dir) {
  StudyConfig c;
  c.data_dir = dir.path() / "data";
  c.stimuli_dir = dir.path() / "stimuli";
  return c;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

TEST(Sessions, SizeLimitsAndDeterministicOrder) {
  TempDir dir("study");
  StudyStore store(config(dir));
  EXPECT_NO_THROW(store.create_session(request(stimuli(300), 1)));
  EXPECT_THROW(store.create_session(request(stimuli(301), 1)), ValidationError);
  EXPECT_THROW(store.create_session(request({}, 1)), ValidationError);
  EXPECT_THROW(store.create_session(request({"a", "a"}, 1)), ValidationError);
  const auto a = store.create_session(request(stimuli(50), 7));
  const auto b = store.create_session(request(stimuli(50), 7));
  EXPECT_EQ(a.order, b.order);
  EXPECT_NE(a.session_id, b.session_id);
  EXPECT_NE(a.order, stimuli(50));
  std::multiset<std::string> sorted(a.order.begin(), a.order.end());
  const auto all = stimuli(50);
  EXPECT_EQ(sorted, std::multiset<std::string>(all.begin(), all.end()));
  EXPECT_NE(store.create_session(request(stimuli(50), 8)).order, a.order);
  EXPECT_THROW(store.create_session({stimuli(3), 1, std::nullopt, a.session_id}), ConflictError);
}

TEST(Ratings, GridAndRangeRules) {
  TempDir dir("study");
  StudyStore store(config(dir));
  const auto s = store.create_session({{"x", "y"}, 0, std::nullopt, std::string("s")});
  EXPECT_DOUBLE_EQ(store.submit("s", "r", "x", 3.7), 3.7);
  EXPECT_THROW(store.submit("s", "r", "x", 5.01), ValidationError);
  EXPECT_THROW(store.submit("s", "r", "x", 3.75), ValidationError);
  EXPECT_THROW(store.submit("s", "r", "x", -0.1), ValidationError);
  EXPECT_THROW(store.submit("s", "r", "z", 1.0), NotFoundError);
  EXPECT_THROW(store.submit("nope", "r", "x", 1.0), NotFoundError);
  EXPECT_THROW(store.submit("s", "", "x", 1.0), ValidationError);
  EXPECT_NO_THROW(store.submit("s", "r", "y", 0.1 + 0.2));
  EXPECT_EQ(store.rating_count(), 2u);
}

TEST(Ratings, ResubmissionOverwrites) {
  TempDir dir("study");
  StudyStore store(config(dir));
  store.create_session({{"x"}, 0, std::nullopt, std::string("s")});
  store.submit("s", "r", "x", 2.0);
  store.submit("s", "r", "x", 4.0);
  const auto rows = store.export_records();
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].rating, 4.0);
}

TEST(Ratings, ClosedRosterRejectsStrangers) {
  TempDir dir("study");
  StudyStore store(config(dir));
  store.create_session({{"x"}, 0, std::vector<std::string>{"ann", "bo"}, std::string("s")});
  EXPECT_NO_THROW(store.submit("s", "bo", "x", 1.0));
  EXPECT_THROW(store.submit("s", "eve", "x", 1.0), ConflictError);
  EXPECT_THROW(store.next("s", "eve"), ConflictError);
}

TEST(Navigation, ForwardThenBackKeepsRatings) {
  TempDir dir("study");
  StudyStore store(config(dir));
  const auto s = store.create_session({stimuli(10), 3, std::nullopt, std::string("s")});
  std::map<std::string, double> entered;
  for (int i = 0; i < 10; ++i) {
    const Navigation n = store.next("s", "r");
    ASSERT_FALSE(n.done);
    EXPECT_EQ(n.index, i);
    EXPECT_EQ(n.stimulus_id, s.order[static_cast<std::size_t>(i)]);
    EXPECT_FALSE(n.rating.has_value());
    entered[n.stimulus_id] = i / 2.0;
    store.submit("s", "r", n.stimulus_id, i / 2.0);
  }
  EXPECT_TRUE(store.next("s", "r").done);
  for (int i = 8; i >= 0; --i) {
    const Navigation n = store.prev("s", "r");
    EXPECT_EQ(n.index, i);
    ASSERT_TRUE(n.rating.has_value());
    EXPECT_EQ(*n.rating, entered[n.stimulus_id]);
    EXPECT_FALSE(n.at_start && i > 0);
  }
  const Navigation start = store.prev("s", "r");
  EXPECT_TRUE(start.at_start);
  EXPECT_EQ(start.index, 0);
}

TEST(Navigation, DoneExactlyAfterLastUnratedItem) {
  TempDir dir("study");
  StudyStore store(config(dir));
  store.create_session({stimuli(4), 1, std::nullopt, std::string("s")});
  std::vector<std::string> seen;
  for (int i = 0; i < 4; ++i) seen.push_back(store.next("s", "r").stimulus_id);
  for (int i = 0; i < 3; ++i) store.submit("s", "r", seen[static_cast<std::size_t>(i)], 1.0);
  // Past the end with one item unrated: wraps to it.
  const Navigation wrap = store.next("s", "r");
  EXPECT_FALSE(wrap.done);
  EXPECT_EQ(wrap.stimulus_id, seen[3]);
  store.submit("s", "r", seen[3], 1.0);
  const Navigation done = store.next("s", "r");
  EXPECT_TRUE(done.done);
  EXPECT_EQ(done.rated, 4u);
}

TEST(Navigation, PrevBeforeStartStaysAtZero) {
  TempDir dir("study");
  StudyStore store(config(dir));
  store.create_session({stimuli(3), 1, std::nullopt, std::string("s")});
  const Navigation n = store.prev("s", "r");
  EXPECT_TRUE(n.at_start);
  EXPECT_EQ(n.index, 0);
  EXPECT_TRUE(store.prev("s", "r").at_start);
  EXPECT_EQ(store.next("s", "r").index, 1);
}

TEST(Navigation, RatersAreIsolated) {
  TempDir dir("study");
  StudyStore store(config(dir));
  store.create_session({stimuli(6), 1, std::nullopt, std::string("s")});
  for (int i = 0; i < 3; ++i) store.next("s", "a");
  store.next("s", "b");
  store.submit("s", "a", store.current("s", "a").stimulus_id, 5.0);
  EXPECT_EQ(store.current("s", "a").index, 2);
  EXPECT_EQ(store.current("s", "b").index, 0);
  EXPECT_EQ(store.current("s", "b").rated, 0u);
  EXPECT_EQ(store.prev("s", "b").index, 0);
  EXPECT_EQ(store.current("s", "a").index, 2);
}

TEST(Persistence, RestartRestoresState) {
  TempDir dir("study");
  std::vector<RatingRecord> before;
  {
    StudyStore store(config(dir));
    store.create_session({stimuli(5), 2, std::vector<std::string>{"p", "q"}, std::string("s")});
    store.next("s", "p");
    store.next("s", "p");
    store.submit("s", "p", "img1.png", 2.5);
    store.submit("s", "q", "img4.png", 0.0);
    before = store.export_records();
  }
  StudyStore again(config(dir));
  EXPECT_EQ(again.export_records(), before);
  EXPECT_EQ(again.current("s", "p").index, 1);
  EXPECT_THROW(again.submit("s", "z", "img1.png", 1.0), ConflictError);
}

TEST(Persistence, TornTailIsDroppedCorruptMiddleThrows) {
  TempDir dir("study");
  {
    StudyStore store(config(dir));
    store.create_session({stimuli(3), 2, std::nullopt, std::string("s")});
    store.submit("s", "r", "img0.png", 1.0);
    store.submit("s", "r", "img1.png", 2.0);
  }
  const auto log = dir.path() / "data" / "study.log";
  const std::string text = read_file(log);
  {
    std::ofstream out(log, std::ios::binary | std::ios::app);
    out << R"({"t":"rating","session":"s","rater":"r","stim)";
  }
  {
    StudyStore store(config(dir));
    EXPECT_EQ(store.rating_count(), 2u);
    EXPECT_EQ(read_file(log), text);
    store.submit("s", "r", "img2.png", 3.0);
  }
  EXPECT_EQ(StudyStore(config(dir)).rating_count(), 3u);
  {
    std::ofstream out(log, std::ios::binary | std::ios::trunc);
    const auto first_nl = text.find('\n');
    out << text.substr(0, first_nl + 1) << "{garbage\n" << text.substr(first_nl + 1);
  }
  EXPECT_THROW(StudyStore(config(dir)), IoError);
}

TEST(Persistence, CompactionKeepsStateAndShrinksLog) {
  TempDir dir("study");
  auto cfg = config(dir);
  cfg.compact_after = 0;
  std::vector<RatingRecord> before;
  {
    StudyStore store(cfg);
    store.create_session({stimuli(4), 2, std::nullopt, std::string("s")});
    for (int k = 0; k < 50; ++k) store.submit("s", "r", "img0.png", (k % 50) / 10.0);
    store.next("s", "r");
    before = store.export_records();
    const auto size_before = std::filesystem::file_size(cfg.data_dir / "study.log");
    store.compact();
    EXPECT_LT(std::filesystem::file_size(cfg.data_dir / "study.log"), size_before);
    EXPECT_FALSE(std::filesystem::exists(cfg.data_dir / "study.log.tmp"));
    store.submit("s", "r", "img1.png", 1.0);
    before = store.export_records();
  }
  StudyStore again(cfg);
  EXPECT_EQ(again.export_records(), before);
  EXPECT_EQ(again.current("s", "r").index, 0);
}

TEST(Persistence, AutomaticCompaction) {
  TempDir dir("study");
  auto cfg = config(dir);
  cfg.compact_after = 10;
  {
    StudyStore store(cfg);
    store.create_session({stimuli(3), 2, std::nullopt, std::string("s")});
    for (int k = 0; k < 35; ++k) store.submit("s", "r", "img" + std::to_string(k % 3) + ".png", 1.0);
  }
  StudyStore again(cfg);
  EXPECT_EQ(again.rating_count(), 3u);
}

TEST(Export, RoundTripThroughCsvIsByteIdentical) {
  TempDir dir("study");
  StudyStore store(config(dir));
  store.create_session({stimuli(3), 2, std::nullopt, std::string("s")});
  store.submit("s", "r", "img0.png", 1.0);
  store.submit("s", "r", "img1.png", 4.9);
  store.submit("s", "r", "img2.png", 0.3);
  std::ostringstream first;
  write_ratings_csv(first, store.export_records());
  std::istringstream in(first.str());
  std::ostringstream second;
  write_ratings_csv(second, read_ratings_csv(in));
  EXPECT_EQ(first.str(), second.str());
  const std::string text = first.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
}

TEST(Concurrency, TwentyRatersNoneLost) {
  TempDir dir("study");
  StudyStore store(config(dir));
  const auto s = store.create_session({stimuli(50), 5, std::nullopt, std::string("s")});
  std::vector<std::thread> threads;
  for (int r = 0; r < 20; ++r) {
    threads.emplace_back([&store, r] {
      const std::string rater = "rater" + std::to_string(r);
      for (;;) {
        const Navigation n = store.next("s", rater);
        if (n.done) break;
        store.submit("s", rater, n.stimulus_id, ((r + n.index) % 51) / 10.0);
      }
    });
  }
  for (auto& t : threads) t.join();
  const auto rows = store.export_records();
  EXPECT_EQ(rows.size(), 1000u);
  for (const auto& row : rows) EXPECT_TRUE(on_rating_grid(row.rating));
  EXPECT_EQ(StudyStore(config(dir)).export_records(), rows);
}

TEST(Stimuli, PathResolution) {
  TempDir dir("study");
  auto cfg = config(dir);
  std::filesystem::create_directories(cfg.stimuli_dir);
  save_image(cfg.stimuli_dir / "a.png", Image(4, 4));
  StudyStore store(cfg);
  EXPECT_EQ(store.stimulus_path("a.png"), cfg.stimuli_dir / "a.png");
  EXPECT_THROW(store.stimulus_path("missing.png"), NotFoundError);
  EXPECT_THROW(store.stimulus_path("../data/study.log"), NotFoundError);
  EXPECT_THROW(store.stimulus_path(".."), NotFoundError);
}

class HttpApi : public ::testing::Test {
 protected:
  void SetUp() override {
    auto cfg = config(dir_);
    std::filesystem::create_directories(cfg.stimuli_dir);
    Image img(8, 6);
    img.pixel(1, 1)[0] = 200;
    save_image(cfg.stimuli_dir / "img0.png", img);
    store_ = std::make_unique<StudyStore>(cfg);
    server_ = std::make_unique<StudyServer>(*store_, ServerConfig{"127.0.0.1", 0, 8});
    port_ = server_->start();
  }
  void TearDown() override { server_->stop(); }

  httplib::Client client() { return httplib::Client("127.0.0.1", port_); }

  TempDir dir_{"http"};
  std::unique_ptr<StudyStore> store_;
  std::unique_ptr<StudyServer> server_;
  int port_ = 0;
};

TEST_F(HttpApi, SessionRatingExportFlow) {
  auto c = client();
  const json create{{"stimuli", stimuli(3)}, {"seed", 4}, {"session_id", "s1"}};
  auto res = c.Post("/sessions", create.dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 201);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
  const json session = json::parse(res->body);
  EXPECT_EQ(session["stimuli"].size(), 3u);

  res = c.Get("/sessions/s1/next?rater=ann");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  json nav = json::parse(res->body);
  EXPECT_EQ(nav["status"], "stimulus");
  EXPECT_EQ(nav["index"], 0);
  EXPECT_EQ(nav["stimulus_id"], session["stimuli"][0]);
  EXPECT_TRUE(nav["rating"].is_null());

  const json rating{{"session", "s1"}, {"rater", "ann"}, {"stimulus", nav["stimulus_id"]}, {"value", 3.7}};
  res = c.Post("/ratings", rating.dump(), "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["value"], 3.7);

  res = c.Get("/sessions/s1/prev?rater=ann");
  nav = json::parse(res->body);
  EXPECT_TRUE(nav["at_start"].get<bool>());
  EXPECT_EQ(nav["rating"], 3.7);

  res = c.Get("/export.csv");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->get_header_value("Content-Type"), "text/csv");
  std::istringstream in(res->body);
  const auto rows = read_ratings_csv(in);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].subject_id, "ann");
  EXPECT_EQ(rows[0].rating, 3.7);
}

TEST_F(HttpApi, ErrorStatuses) {
  auto c = client();
  auto post = [&](const char* path, const json& body) {
    return c.Post(path, body.dump(), "application/json");
  };
  ASSERT_EQ(post("/sessions", {{"stimuli", stimuli(2)}, {"session_id", "s"}})->status, 201);
  EXPECT_EQ(post("/sessions", {{"stimuli", stimuli(301)}})->status, 400);
  EXPECT_EQ(post("/sessions", {{"stimuli", json::array()}})->status, 400);
  EXPECT_EQ(post("/sessions", {{"stimuli", stimuli(2)}, {"session_id", "s"}})->status, 409);
  EXPECT_EQ(c.Post("/sessions", "{not json", "application/json")->status, 400);
  const json base{{"session", "s"}, {"rater", "r"}, {"stimulus", "img0.png"}};
  auto with = [&](const json& v) {
    json b = base;
    b["value"] = v;
    return b;
  };
  EXPECT_EQ(post("/ratings", with(5.01))->status, 400);
  EXPECT_EQ(post("/ratings", with(3.75))->status, 400);
  EXPECT_EQ(post("/ratings", with("3.5"))->status, 400);
  EXPECT_EQ(post("/ratings", base)->status, 400);
  EXPECT_EQ(post("/ratings", with(2.0))->status, 200);
  json unknown = with(2.0);
  unknown["stimulus"] = "nope.png";
  EXPECT_EQ(post("/ratings", unknown)->status, 404);
  unknown = with(2.0);
  unknown["session"] = "nope";
  EXPECT_EQ(post("/ratings", unknown)->status, 404);
  EXPECT_EQ(c.Get("/sessions/s/next")->status, 400);
  EXPECT_EQ(c.Get("/sessions/zzz/next?rater=r")->status, 404);
  const auto err = json::parse(c.Get("/sessions/zzz/next?rater=r")->body);
  EXPECT_EQ(err["error"]["type"], "not_found");
}

TEST_F(HttpApi, ServesStimulusBytes) {
  auto c = client();
  auto res = c.Get("/stimuli/img0.png");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(res->body, read_file(dir_.path() / "stimuli" / "img0.png"));
  EXPECT_EQ(c.Get("/stimuli/missing.png")->status, 404);
  EXPECT_EQ(c.Options("/ratings")->status, 204);
}

}  // namespace
}  // namespace cgiqa
