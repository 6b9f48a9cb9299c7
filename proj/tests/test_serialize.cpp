#include <doctest.h>

#include <cstring>
#include <sstream>

#include "duoformer/errors.hpp"
#include "duoformer/serialize.hpp"
#include "oracles.hpp"
#include "scratch.hpp"

using namespace duo;

namespace {

// Little-endian byte image of a DFT1 record, assembled by hand.
std::string dft1_bytes(std::uint8_t code, const std::vector<std::uint64_t>& extents,
                       const std::string& payload) {
  std::string out = "DFT1";
  out.push_back(static_cast<char>(code));
  out.push_back(static_cast<char>(extents.size()));
  for (auto e : extents) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((e >> (8 * b)) & 0xff));
  }
  return out + payload;
}

template <typename T>
std::string le_bytes(T value) {
  std::string out(sizeof(T), '\0');
  std::memcpy(out.data(), &value, sizeof(T));
  return out;  // host is little-endian on every supported target
}

}  // namespace

TEST_CASE("DFT1 byte layout matches the hand-assembled image") {
  const auto t = Tensor<float>::from_values({2}, {1.5f, -2.0f});
  std::ostringstream out;
  io::write_record(out, io::to_record(t));
  CHECK(out.str() == dft1_bytes(0, {2}, le_bytes(1.5f) + le_bytes(-2.0f)));

  std::ostringstream ints;
  io::write_record(ints, io::from_i64({3}, {7, -1, 1LL << 40}));
  CHECK(ints.str() ==
        dft1_bytes(2, {3}, le_bytes<std::int64_t>(7) + le_bytes<std::int64_t>(-1) +
                               le_bytes<std::int64_t>(1LL << 40)));
}

TEST_CASE("DFT1 round trip is bitwise for every dtype") {
  Rng rng(3);
  const auto f = oracle::random_tensor<float>(rng, {3, 4, 5}, -1e3, 1e3);
  const auto d = oracle::random_tensor<double>(rng, {7, 2});
  for (const auto& rec : {io::to_record(f), io::to_record(d), io::from_i64({2, 2}, {1, -2, 3, -4}),
                          io::from_text("classes=4\nname=x\n")}) {
    std::ostringstream out;
    io::write_record(out, rec);
    std::istringstream in(out.str());
    const auto back = io::read_record(in);
    CHECK(back == rec);
    std::ostringstream again;
    io::write_record(again, back);
    CHECK(again.str() == out.str());
  }
  const auto back = io::to_tensor<float>(io::to_record(f));
  CHECK(std::memcmp(back.data().data(), f.data().data(), sizeof(float) * f.numel()) == 0);
}

TEST_CASE("DFC1 container round trip through a file") {
  scratch::Dir dir("serialize");
  Rng rng(4);
  io::Container c;
  c.put("a.w", io::to_record(oracle::random_tensor<double>(rng, {3, 3})));
  c.put("b", io::from_i64({}, {224}));
  c.put("config", io::from_text("embed_dim=16\n"));
  io::save_container(dir / "c.dfc", c);
  const auto back = io::load_container(dir / "c.dfc");
  CHECK(back == c);
  io::save_container(dir / "d.dfc", back);
  CHECK(scratch::read_bytes(dir / "c.dfc") == scratch::read_bytes(dir / "d.dfc"));
  CHECK(back.at("b").count() == 1);
  CHECK_THROWS_AS(back.at("missing"), FormatError);
}

TEST_CASE("corrupted inputs are rejected with FormatError") {
  scratch::Dir dir("serialize_bad");
  const auto rec = io::to_record(Tensor<double>::from_values({2}, {1, 2}));
  std::ostringstream out;
  io::write_record(out, rec);
  const std::string good = out.str();

  SUBCASE("magic") {
    std::string bad = good;
    bad[0] = 'X';
    std::istringstream in(bad);
    CHECK_THROWS_AS(io::read_record(in), FormatError);
  }
  SUBCASE("dtype code") {
    std::string bad = good;
    bad[4] = 9;
    std::istringstream in(bad);
    CHECK_THROWS_AS(io::read_record(in), FormatError);
  }
  SUBCASE("truncated payload") {
    std::istringstream in(good.substr(0, good.size() - 3));
    CHECK_THROWS_AS(io::read_record(in), FormatError);
  }
  SUBCASE("container magic") {
    io::Container c;
    c.put("x", rec);
    io::save_container(dir / "x.dfc", c);
    std::string bytes = scratch::read_bytes(dir / "x.dfc");
    bytes[3] = '0';
    scratch::write_bytes(dir / "x.dfc", bytes);
    CHECK_THROWS_AS(io::load_container(dir / "x.dfc"), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(io::load_record(dir / "nope.dft"), FormatError); }
  SUBCASE("wrong payload kind") {
    CHECK_THROWS_AS(io::to_i64(rec), FormatError);
    CHECK_THROWS_AS(io::to_text(rec), FormatError);
  }
}

TEST_CASE("to_tensor converts between float widths") {
  const auto d = Tensor<double>::from_values({3}, {0.5, -0.25, 3.0});
  const auto f = io::to_tensor<float>(io::to_record(d));
  CHECK(f.shape() == Shape{3});
  CHECK(f.data()[1] == -0.25f);
}
