#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <spdlog/spdlog.h>
#include <unordered_map>
#include <unordered_set>

#include "nvhcf/data.hpp"
#include "nvhcf/errors.hpp"
#include "text_util.hpp"

namespace nvhcf::data {

namespace {

const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words = {
      "a",     "about", "above", "after", "again", "against", "all",   "am",    "an",    "and",   "any",   "are",
      "as",    "at",    "be",    "been",  "before", "being",  "below", "between", "both", "but",  "by",    "can",
      "did",   "do",    "does",  "doing", "down",  "during", "each",  "few",   "for",   "from",  "further", "had",
      "has",   "have",  "having", "he",   "her",   "here",  "hers",  "him",   "his",   "how",   "i",     "if",
      "in",    "into",  "is",    "it",    "its",   "itself", "just", "me",    "more",  "most",  "my",    "no",
      "nor",   "not",   "now",   "of",    "off",   "on",    "once",  "only",  "or",    "other", "our",   "out",
      "over",  "own",   "same",  "she",   "should", "so",   "some",  "such",  "than",  "that",  "the",   "their",
      "them",  "then",  "there", "these", "they",  "this",  "those", "through", "to",  "too",   "under", "until",
      "up",    "very",  "was",   "we",    "were",  "what",  "when",  "where", "which", "while", "who",   "whom",
      "why",   "will",  "with",  "you",   "your",  "le",    "la",    "les",   "de",    "des",   "du",    "el",
      "il",    "die",   "der",   "das",   "un",    "une"};
  return words;
}

constexpr std::array<const char*, 19> kMl100kGenres = {
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime", "Documentary", "Drama", "Fantasy",
    "Film-Noir", "Horror", "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western"};

constexpr std::array<const char*, 18> kMl1mGenres = {
    "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime", "Documentary", "Drama", "Fantasy",
    "Film-Noir", "Horror", "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western"};

std::ifstream open_required(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing metadata file: expected " + path.string());
  return in;
}

std::unordered_map<std::int64_t, std::size_t> index_of(const std::vector<std::int64_t>& raw_ids) {
  std::unordered_map<std::int64_t, std::size_t> out;
  for (std::size_t i = 0; i < raw_ids.size(); ++i) out.emplace(raw_ids[i], i);
  return out;
}

// [flags | bag of words over titles]
Matrix item_matrix(const Matrix& flags, const BagOfWords& bow) {
  Matrix out(flags.rows(), flags.cols() + bow.rows.cols());
  out << flags, bow.rows;
  return out;
}

void log_missing(std::string_view what, std::size_t count) {
  if (count > 0) spdlog::info("{} {} without metadata; using zero feature vectors", count, what);
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (current.size() >= 2 && !std::all_of(current.begin(), current.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }) &&
        !stopwords().contains(current))
      out.push_back(current);
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 128 && std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

BagOfWords bag_of_words(const std::vector<std::vector<std::string>>& documents, std::size_t max_terms,
                        std::size_t min_df) {
  std::map<std::string, std::size_t> df;
  for (const auto& doc : documents) {
    std::set<std::string> seen(doc.begin(), doc.end());
    for (const auto& t : seen) ++df[t];
  }
  std::vector<std::pair<std::string, std::size_t>> terms;
  for (const auto& [term, count] : df)
    if (count >= min_df) terms.emplace_back(term, count);
  std::stable_sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (terms.size() > max_terms) terms.resize(max_terms);
  std::sort(terms.begin(), terms.end());

  BagOfWords bow;
  std::unordered_map<std::string, Eigen::Index> column;
  for (const auto& [term, count] : terms) {
    column.emplace(term, static_cast<Eigen::Index>(bow.vocabulary.size()));
    bow.vocabulary.push_back(term);
  }
  bow.rows = Matrix::Zero(static_cast<Eigen::Index>(documents.size()), static_cast<Eigen::Index>(terms.size()));
  for (std::size_t d = 0; d < documents.size(); ++d) {
    for (const auto& t : documents[d]) {
      auto it = column.find(t);
      if (it != column.end()) bow.rows(static_cast<Eigen::Index>(d), it->second) += 1.0;
    }
    const double norm = bow.rows.row(static_cast<Eigen::Index>(d)).norm();
    if (norm > 0.0) bow.rows.row(static_cast<Eigen::Index>(d)) /= norm;
  }
  return bow;
}

std::size_t age_bucket(int age) {
  if (age < 18) return 0;
  if (age < 25) return 1;
  if (age < 35) return 2;
  if (age < 45) return 3;
  if (age < 50) return 4;
  if (age < 56) return 5;
  return 6;
}

int zip_bucket(std::string_view zip) {
  zip = detail::trim(zip);
  if (zip.empty() || !std::isdigit(static_cast<unsigned char>(zip.front()))) return -1;
  return zip.front() - '0';
}

Matrix encode_demographics(const std::vector<std::optional<Demographics>>& users,
                           const std::vector<std::string>& occupations, std::vector<std::string>* names) {
  const Eigen::Index occ = static_cast<Eigen::Index>(occupations.size());
  const Eigen::Index age0 = 2, occ0 = age0 + 7, zip0 = occ0 + occ, width = zip0 + 10;
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(users.size()), width);
  for (std::size_t i = 0; i < users.size(); ++i) {
    if (!users[i]) continue;
    const Demographics& d = *users[i];
    const auto r = static_cast<Eigen::Index>(i);
    if (d.gender == "M") out(r, 0) = 1.0;
    if (d.gender == "F") out(r, 1) = 1.0;
    if (d.age > 0) out(r, age0 + static_cast<Eigen::Index>(age_bucket(d.age))) = 1.0;
    auto it = std::find(occupations.begin(), occupations.end(), d.occupation);
    if (it != occupations.end()) out(r, occ0 + std::distance(occupations.begin(), it)) = 1.0;
    if (const int z = zip_bucket(d.zip); z >= 0) out(r, zip0 + z) = 1.0;
  }
  if (names != nullptr) {
    names->assign({"gender=M", "gender=F"});
    for (const char* a : {"age<18", "age18-24", "age25-34", "age35-44", "age45-49", "age50-55", "age56+"})
      names->emplace_back(a);
    for (const auto& o : occupations) names->push_back("occupation=" + o);
    for (int z = 0; z < 10; ++z) names->push_back("zip=" + std::to_string(z));
  }
  return out;
}

SideInfo ml100k_side_info(const std::filesystem::path& dir, const RatingsFile& ratings,
                          const SideInfoOptions& options) {
  SideInfo side;
  const auto user_index = index_of(ratings.raw_user_ids);
  const auto item_index = index_of(ratings.raw_item_ids);

  std::vector<std::optional<Demographics>> users(ratings.raw_user_ids.size());
  std::set<std::string> occupation_set;
  {
    auto in = open_required(dir / "u.user");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (detail::trim(line).empty()) continue;
      const auto f = detail::split(line, "|");
      std::int64_t id = 0, age = 0;
      if (f.size() < 5 || !detail::parse_int(f[0], id) || !detail::parse_int(f[1], age))
        throw ParseError((dir / "u.user").string(), line_no, "expected id|age|gender|occupation|zip");
      occupation_set.emplace(f[3]);
      auto it = user_index.find(id);
      if (it == user_index.end()) continue;
      users[it->second] = Demographics{std::string(f[2]), static_cast<int>(age), std::string(f[3]), std::string(f[4])};
    }
  }
  const std::vector<std::string> occupations(occupation_set.begin(), occupation_set.end());
  side.user_features = encode_demographics(users, occupations, &side.user_feature_names);
  side.users_without_metadata = static_cast<std::size_t>(std::count(users.begin(), users.end(), std::nullopt));

  const auto n_items = static_cast<Eigen::Index>(ratings.raw_item_ids.size());
  Matrix genres = Matrix::Zero(n_items, static_cast<Eigen::Index>(kMl100kGenres.size()));
  std::vector<std::vector<std::string>> titles(ratings.raw_item_ids.size());
  std::vector<bool> seen(ratings.raw_item_ids.size(), false);
  {
    auto in = open_required(dir / "u.item");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (detail::trim(line).empty()) continue;
      const auto f = detail::split(line, "|");
      std::int64_t id = 0;
      if (f.size() < 5 + kMl100kGenres.size() || !detail::parse_int(f[0], id))
        throw ParseError((dir / "u.item").string(), line_no, "expected id|title|date|video date|url|19 genre flags");
      auto it = item_index.find(id);
      if (it == item_index.end()) continue;
      const auto j = static_cast<Eigen::Index>(it->second);
      seen[it->second] = true;
      titles[it->second] = tokenize(f[1]);
      for (std::size_t g = 0; g < kMl100kGenres.size(); ++g) {
        std::int64_t flag = 0;
        if (!detail::parse_int(f[5 + g], flag))
          throw ParseError((dir / "u.item").string(), line_no, "non-numeric genre flag");
        genres(j, static_cast<Eigen::Index>(g)) = static_cast<double>(flag);
      }
    }
  }
  const BagOfWords bow = bag_of_words(titles, options.max_terms, options.min_df);
  side.item_features = item_matrix(genres, bow);
  for (const char* g : kMl100kGenres) side.item_feature_names.push_back(std::string("genre=") + g);
  for (const auto& t : bow.vocabulary) side.item_feature_names.push_back("title:" + t);
  side.items_without_metadata = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), false));
  log_missing("users", side.users_without_metadata);
  log_missing("items", side.items_without_metadata);
  return side;
}

SideInfo ml1m_side_info(const std::filesystem::path& dir, const RatingsFile& ratings, const SideInfoOptions& options) {
  SideInfo side;
  const auto user_index = index_of(ratings.raw_user_ids);
  const auto item_index = index_of(ratings.raw_item_ids);

  std::vector<std::optional<Demographics>> users(ratings.raw_user_ids.size());
  {
    auto in = open_required(dir / "users.dat");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (detail::trim(line).empty()) continue;
      const auto f = detail::split(line, "::");
      std::int64_t id = 0, age = 0;
      if (f.size() < 5 || !detail::parse_int(f[0], id) || !detail::parse_int(f[2], age))
        throw ParseError((dir / "users.dat").string(), line_no, "expected UserID::Gender::Age::Occupation::Zip");
      auto it = user_index.find(id);
      if (it == user_index.end()) continue;
      users[it->second] = Demographics{std::string(f[1]), static_cast<int>(age), std::string(f[3]), std::string(f[4])};
    }
  }
  std::vector<std::string> occupations;
  for (int o = 0; o <= 20; ++o) occupations.push_back(std::to_string(o));
  side.user_features = encode_demographics(users, occupations, &side.user_feature_names);
  side.users_without_metadata = static_cast<std::size_t>(std::count(users.begin(), users.end(), std::nullopt));

  const auto n_items = static_cast<Eigen::Index>(ratings.raw_item_ids.size());
  Matrix genres = Matrix::Zero(n_items, static_cast<Eigen::Index>(kMl1mGenres.size()));
  std::vector<std::vector<std::string>> titles(ratings.raw_item_ids.size());
  std::vector<bool> seen(ratings.raw_item_ids.size(), false);
  {
    auto in = open_required(dir / "movies.dat");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (detail::trim(line).empty()) continue;
      const auto f = detail::split(line, "::");
      std::int64_t id = 0;
      if (f.size() < 3 || !detail::parse_int(f[0], id))
        throw ParseError((dir / "movies.dat").string(), line_no, "expected MovieID::Title::Genres");
      auto it = item_index.find(id);
      if (it == item_index.end()) continue;
      seen[it->second] = true;
      titles[it->second] = tokenize(f[1]);
      for (auto g : detail::split(f[2], "|")) {
        auto pos = std::find(kMl1mGenres.begin(), kMl1mGenres.end(), g);
        if (pos != kMl1mGenres.end())
          genres(static_cast<Eigen::Index>(it->second), std::distance(kMl1mGenres.begin(), pos)) = 1.0;
      }
    }
  }
  const BagOfWords bow = bag_of_words(titles, options.max_terms, options.min_df);
  side.item_features = item_matrix(genres, bow);
  for (const char* g : kMl1mGenres) side.item_feature_names.push_back(std::string("genre=") + g);
  for (const auto& t : bow.vocabulary) side.item_feature_names.push_back("title:" + t);
  side.items_without_metadata = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), false));
  log_missing("users", side.users_without_metadata);
  log_missing("items", side.items_without_metadata);
  return side;
}

SideInfo lastfm_side_info(const std::filesystem::path& dir, const RatingsFile& ratings,
                          const SideInfoOptions& options) {
  SideInfo side;
  const auto user_index = index_of(ratings.raw_user_ids);
  const auto item_index = index_of(ratings.raw_item_ids);
  const auto m = static_cast<Eigen::Index>(ratings.raw_user_ids.size());

  auto read_rows = [](const std::filesystem::path& path, std::size_t min_fields, auto&& on_row) {
    auto in = open_required(path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto f = detail::split_ws(line);
      if (f.empty()) continue;
      if (line_no == 1 && !std::isdigit(static_cast<unsigned char>(f[0].front()))) continue;
      std::vector<std::int64_t> values(min_fields);
      if (f.size() < min_fields) throw ParseError(path.string(), line_no, "too few fields");
      for (std::size_t k = 0; k < min_fields; ++k)
        if (!detail::parse_int(f[k], values[k])) throw ParseError(path.string(), line_no, "non-numeric field");
      on_row(values);
    }
  };

  side.user_features = Matrix::Zero(m, m);
  std::vector<bool> has_friend(static_cast<std::size_t>(m), false);
  read_rows(dir / "user_friends.dat", 2, [&](const std::vector<std::int64_t>& v) {
    auto a = user_index.find(v[0]);
    auto b = user_index.find(v[1]);
    if (a == user_index.end() || b == user_index.end()) return;
    side.user_features(static_cast<Eigen::Index>(a->second), static_cast<Eigen::Index>(b->second)) = 1.0;
    has_friend[a->second] = true;
  });
  for (std::int64_t raw : ratings.raw_user_ids) side.user_feature_names.push_back("friend:" + std::to_string(raw));
  side.users_without_metadata = static_cast<std::size_t>(std::count(has_friend.begin(), has_friend.end(), false));

  std::vector<std::vector<std::string>> tags(ratings.raw_item_ids.size());
  read_rows(dir / "user_taggedartists.dat", 3, [&](const std::vector<std::int64_t>& v) {
    auto it = item_index.find(v[1]);
    if (it == item_index.end()) return;
    tags[it->second].push_back("tag" + std::to_string(v[2]));
  });
  const BagOfWords bow = bag_of_words(tags, options.max_terms, options.min_df);
  side.item_features = bow.rows;
  side.item_feature_names = bow.vocabulary;
  side.items_without_metadata =
      static_cast<std::size_t>(std::count_if(tags.begin(), tags.end(), [](const auto& t) { return t.empty(); }));
  log_missing("users", side.users_without_metadata);
  log_missing("items", side.items_without_metadata);
  return side;
}

}  // namespace nvhcf::data
