#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "facegen/embedding.hpp"
#include "facegen/rng.hpp"
#include "facegen/vector_store.hpp"

using namespace facegen;

namespace {

// Naive all-pairs oracle for the blocked scan.
MaxCosine naive_max_cosine(const Vec& query, const VectorStore& pool,
                           std::optional<std::size_t> exclude) {
  MaxCosine best{-2.0, 0};
  bool any = false;
  for (std::size_t i = 0; i < pool.count(); ++i) {
    if (exclude && *exclude == i) continue;
    const double c = cosine_sim(query, pool.row(i));
    if (!any || c > best.sim) {
      best = {c, i};
      any = true;
    }
  }
  REQUIRE(any);
  return best;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("oracle embedder is a deterministic linear map") {
  OracleEmbedder oracle(16, 8, 99);
  Vec zero(16, 0.0);
  CHECK(oracle.embed(zero) == Vec(8, 0.0));

  Rng rng(1);
  const Vec image = rng.normal_vec(16);
  OracleEmbedder again(16, 8, 99);
  CHECK(oracle.embed(image) == again.embed(image));
  CHECK_THROWS_AS(oracle.embed(Vec(5, 1.0)), std::invalid_argument);
}

TEST_CASE("norm_clamp projects onto the band and keeps direction") {
  Vec v{3.0, 4.0};  // norm 5
  SUBCASE("above the band") {
    Vec big(v);
    for (auto& x : big) x *= 6.0;  // norm 30
    const Vec out = norm_clamp(big, 18.0, 24.0);
    CHECK(l2norm(out) == doctest::Approx(24.0).epsilon(1e-12));
    CHECK(cosine_sim(out, big) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("inside the band is untouched") {
    Vec mid(v);
    for (auto& x : mid) x *= 4.0;  // norm 20
    CHECK(norm_clamp(mid, 18.0, 24.0) == mid);
  }
  SUBCASE("defaults are 18 and 24") {
    CHECK(kDefaultNormLo == 18.0);
    CHECK(kDefaultNormHi == 24.0);
    Vec small{0.3, 0.4};
    CHECK(l2norm(norm_clamp(small)) == doctest::Approx(18.0).epsilon(1e-12));
  }
  SUBCASE("zero vector errors") {
    CHECK_THROWS_AS(norm_clamp(Vec{0.0, 0.0}, 1.0, 2.0), std::invalid_argument);
  }
}

TEST_CASE("norm_clamp is idempotent") {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    Vec v = rng.normal_vec(16, 1.0 + 30.0 * rng.uniform());
    const Vec once = norm_clamp(v, 18.0, 24.0);
    CHECK(norm_clamp(once, 18.0, 24.0) == once);
  }
}

TEST_CASE("cosine stays in [-1, 1] and cosine(a, a) = 1") {
  Rng rng(6);
  for (int i = 0; i < 500; ++i) {
    Vec a = rng.normal_vec(12);
    Vec b = rng.normal_vec(12);
    const double c = cosine_sim(a, b);
    CHECK(c >= -1.0 - 1e-12);
    CHECK(c <= 1.0 + 1e-12);
    CHECK(cosine_sim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("pairwise_max_cosine on an orthonormal pool") {
  VectorStore pool(3);
  pool.append({1, 0, 0});
  pool.append({0, 1, 0});
  const auto hit = pairwise_max_cosine(pool.row(0), pool, 0);
  CHECK(hit.index == 1);
  CHECK(hit.sim == doctest::Approx(0.0).epsilon(1e-12));

  pool.append({1, 0, 0});  // duplicate of the query
  CHECK(pairwise_max_cosine(pool.row(0), pool, 0).sim == doctest::Approx(1.0).epsilon(1e-12));

  VectorStore lone(3);
  lone.append({1, 0, 0});
  CHECK_THROWS_AS(pairwise_max_cosine(pool.row(0), lone, 0), std::invalid_argument);
}

TEST_CASE("blocked max-cosine equals the naive oracle") {
  Rng rng(8);
  VectorStore pool(24);
  for (int i = 0; i < 1000; ++i) pool.append(rng.normal_vec(24));
  for (std::size_t q = 0; q < 25; ++q) {
    const Vec query = pool.row(q * 40);
    // Tiny block size to force many blocked passes.
    const auto fast = pairwise_max_cosine(query, pool, q * 40, 7);
    const auto slow = naive_max_cosine(query, pool, q * 40);
    CHECK(fast.index == slow.index);
    CHECK(fast.sim == doctest::Approx(slow.sim).epsilon(1e-12));
  }
}

TEST_CASE("vector store round-trip is float32-exact and order-preserving") {
  Rng rng(10);
  VectorStore store(6);
  for (int i = 0; i < 64; ++i) store.append(rng.normal_vec(6, 10.0), "id" + std::to_string(i));
  const auto path = temp_file("facegen_store_test.vec2");
  store.save(path);
  const VectorStore loaded = VectorStore::load(path);
  REQUIRE(loaded.count() == store.count());
  REQUIRE(loaded.dim() == store.dim());
  for (std::size_t i = 0; i < store.count(); ++i) {
    CHECK(loaded.label(i) == store.label(i));
    const Vec a = store.row(i), b = loaded.row(i);
    for (std::size_t j = 0; j < a.size(); ++j) {
      CHECK(b[j] == static_cast<double>(static_cast<float>(a[j])));
    }
  }
  // A second save of the loaded store reproduces the file byte-for-byte.
  const auto path2 = temp_file("facegen_store_test2.vec2");
  loaded.save(path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".labels");
  std::filesystem::remove(path2);
  std::filesystem::remove(path2.string() + ".labels");
}

TEST_CASE("high-dimensional Gaussian vectors are nearly orthogonal") {
  // Monte-Carlo check of the concentration that identity sampling relies on:
  // 1000 random 512-d vectors, brute-force all pairs.
  Rng rng(12);
  VectorStore pool(512);
  for (int i = 0; i < 1000; ++i) pool.append(rng.normal_vec(512));
  const auto max_sims = all_pairs_max_cosine(pool);
  double overall = -2.0;
  for (double s : max_sims) overall = std::max(overall, s);
  CHECK(overall < 0.3);
}
