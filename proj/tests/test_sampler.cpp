#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "facegen/sampler.hpp"

using namespace facegen;

namespace {

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("mixture counts are exact for the default split") {
  PerturbationSpec spec;
  CHECK(mixture_counts(50, spec.mixture) == std::vector<std::size_t>{20, 20, 10});
  CHECK(mixture_counts(10, spec.mixture) == std::vector<std::size_t>{4, 4, 2});
  // The leftover slot goes to the largest remainder (0.6 for sigma 0.7).
  CHECK(mixture_counts(3, spec.mixture) == std::vector<std::size_t>{1, 1, 1});
}

TEST_CASE("sampled identities respect the similarity threshold (brute force)") {
  SamplerConfig cfg;
  cfg.dim = 64;
  cfg.count = 200;
  cfg.max_id_similarity = 0.3;
  cfg.seed = 7;
  const VectorStore ids = sample_identities(cfg);
  REQUIRE(ids.count() == 200);
  for (std::size_t i = 0; i < ids.count(); ++i) {
    for (std::size_t j = i + 1; j < ids.count(); ++j) {
      CHECK(cosine_sim(ids.row(i), ids.row(j)) < 0.3);
    }
  }
}

TEST_CASE("two dimensions cannot hold fifty separated vectors") {
  SamplerConfig cfg;
  cfg.dim = 2;
  cfg.count = 50;
  cfg.max_id_similarity = 0.3;
  cfg.seed = 1;
  CHECK_THROWS_WITH_AS(sample_identities(cfg), doctest::Contains("lower the count"),
                       std::runtime_error);
}

TEST_CASE("identical seeds give byte-identical stores") {
  SamplerConfig cfg;
  cfg.dim = 32;
  cfg.count = 100;
  cfg.seed = 99;
  const auto p1 = std::filesystem::temp_directory_path() / "ids_a.vec2";
  const auto p2 = std::filesystem::temp_directory_path() / "ids_b.vec2";
  sample_identities(cfg).save(p1);
  sample_identities(cfg).save(p2);
  CHECK(file_bytes(p1) == file_bytes(p2));
  for (auto p : {p1, p2}) {
    std::filesystem::remove(p);
    std::filesystem::remove(p.string() + ".labels");
  }
}

TEST_CASE("perturbation honors counts, similarity floor and norm band") {
  SamplerConfig cfg;
  cfg.dim = 512;
  cfg.count = 20;
  cfg.seed = 5;
  const VectorStore ids = sample_identities(cfg);
  PerturbationSpec spec;
  for (std::size_t i = 0; i < ids.count(); ++i) {
    const Vec v_id = ids.row(i);
    const auto out = perturb_identity(v_id, spec, 1000 + i);
    REQUIRE(out.size() == 50);
    for (const auto& p : out) {
      const double n = l2norm(p);
      CHECK(n >= spec.norm_lo - 1e-9);
      CHECK(n <= spec.norm_hi + 1e-9);
      CHECK(n == doctest::Approx(21.0).epsilon(1e-9));  // midpoint target
      CHECK(cosine_sim(v_id, p) >= spec.min_similarity_to_identity);
    }
  }
}

TEST_CASE("vanishing noise keeps the identity direction") {
  PerturbationSpec spec;
  spec.k = 4;
  spec.mixture = {{1e-9, 1.0}};
  Vec v_id(64, 0.0);
  v_id[0] = 3.0;
  v_id[5] = -4.0;
  const auto out = perturb_identity(v_id, spec, 3);
  for (const auto& p : out) {
    CHECK(cosine_sim(p, v_id) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("perturb_store labels rows by source identity") {
  SamplerConfig cfg;
  cfg.dim = 16;
  cfg.count = 3;
  cfg.seed = 2;
  const VectorStore ids = sample_identities(cfg);
  PerturbationSpec spec;
  spec.k = 5;
  const VectorStore out = perturb_store(ids, spec, 77);
  REQUIRE(out.count() == 15);
  for (std::size_t i = 0; i < out.count(); ++i) {
    CHECK(out.label(i) == std::to_string(i / 5));
  }
}

TEST_CASE("invalid configurations are rejected") {
  SamplerConfig cfg;
  cfg.max_id_similarity = 1.5;
  CHECK_THROWS_AS(sample_identities(cfg), std::invalid_argument);
  PerturbationSpec spec;
  spec.mixture = {{0.3, 0.5}, {0.5, 0.4}};  // sums to 0.9
  CHECK_THROWS_AS(perturb_identity(Vec(8, 1.0), spec, 0), std::invalid_argument);
  CHECK_THROWS_AS(perturb_identity(Vec(8, 0.0), PerturbationSpec{}, 0), std::invalid_argument);
}
