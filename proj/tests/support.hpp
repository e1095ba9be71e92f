#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "nvhcf/data.hpp"
#include "nvhcf/model.hpp"

namespace nvhcf::testing {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("nvhcf_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::filesystem::path ml100k_dir() {
  const char* env = std::getenv("NVHCF_ML100K_DIR");
  return env != nullptr ? std::filesystem::path(env) : std::filesystem::path("/root/data/ml-100k");
}

inline bool have_ml100k() { return std::filesystem::exists(ml100k_dir() / "u.data"); }

// Prepared once per test binary (seed 42).
inline const data::PreparedDataset& ml100k() {
  static const data::PreparedDataset ds = [] {
    const auto ratings = data::load_movielens(ml100k_dir() / "u.data");
    return data::prepare_dataset("ml-100k", ratings, data::ml100k_side_info(ml100k_dir(), ratings));
  }();
  return ds;
}

#define NVHCF_REQUIRE_ML100K() \
  if (!::nvhcf::testing::have_ml100k()) GTEST_SKIP() << "ML-100K not found; set NVHCF_ML100K_DIR"

// Two user groups, each interacting with its own half of the items. Within a
// block an entry is positive unless (user + item) % holdout_mod == 0.
struct BlockData {
  data::InteractionMatrix train;
  data::SideInfo side;
  std::vector<data::Interaction> within_block_unobserved;
  std::vector<data::Interaction> cross_block;
};

inline BlockData block_data(std::size_t users = 20, std::size_t items = 30, std::size_t holdout_mod = 0) {
  BlockData b;
  std::vector<data::Interaction> positives;
  std::int64_t t = 1;
  for (std::uint32_t u = 0; u < users; ++u) {
    for (std::uint32_t j = 0; j < items; ++j) {
      const bool same = (u < users / 2) == (j < items / 2);
      if (!same) {
        b.cross_block.push_back({u, j, 0});
      } else if (holdout_mod != 0 && (u + j) % holdout_mod == 0) {
        b.within_block_unobserved.push_back({u, j, 0});
      } else {
        positives.push_back({u, j, t++});
      }
    }
  }
  b.train = data::InteractionMatrix(users, items, positives);
  b.side.user_features = data::Matrix::Zero(static_cast<Eigen::Index>(users), 2);
  b.side.item_features = data::Matrix::Zero(static_cast<Eigen::Index>(items), 2);
  for (std::size_t u = 0; u < users; ++u) b.side.user_features(static_cast<Eigen::Index>(u), u < users / 2 ? 0 : 1) = 1.0;
  for (std::size_t j = 0; j < items; ++j) b.side.item_features(static_cast<Eigen::Index>(j), j < items / 2 ? 0 : 1) = 1.0;
  b.side.user_feature_names = {"group=a", "group=b"};
  b.side.item_feature_names = {"group=a", "group=b"};
  return b;
}

inline model::Widths small_widths() { return {16, 24, 16, 16, 24}; }

}  // namespace nvhcf::testing
