#include <cmath>
#include <fstream>
#include <unordered_set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "mufasa/data.hpp"
#include "mufasa/error.hpp"

namespace mufasa {

using nlohmann::json;

namespace {

bool finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

[[noreturn]] void parse_fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  fail(ErrorCode::kParse, fmt::format("{}:{}: {}", path.string(), line, what));
}

std::ifstream open_input(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    fail(ErrorCode::kFileNotFound, fmt::format("file not found: {}", path.string()));
  }
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, fmt::format("cannot open {}", path.string()));
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  return out;
}

std::vector<double> read_vector(const json& j, const char* field, std::size_t expected,
                                const std::filesystem::path& path, std::size_t line) {
  if (!j.contains(field) || !j.at(field).is_array()) parse_fail(path, line, fmt::format("missing array '{}'", field));
  std::vector<double> v;
  for (const auto& x : j.at(field)) {
    if (!x.is_number()) parse_fail(path, line, fmt::format("'{}' holds a non-number", field));
    v.push_back(x.get<double>());
  }
  if (expected != 0 && !v.empty() && v.size() != expected) {
    parse_fail(path, line, fmt::format("'{}' has dimension {}, expected {}", field, v.size(), expected));
  }
  return v;
}

}  // namespace

bool operator==(const ItemRecord& a, const ItemRecord& b) {
  return a.item_id == b.item_id && a.modalities == b.modalities && a.title_emb == b.title_emb &&
         a.cf_emb == b.cf_emb && a.title_token_count == b.title_token_count &&
         a.genre_label == b.genre_label && a.subcluster == b.subcluster && a.cold_start == b.cold_start;
}

bool operator==(const Catalog& a, const Catalog& b) {
  return a.modalities_ == b.modalities_ && a.dim_ == b.dim_ && a.items_ == b.items_;
}

std::size_t Catalog::add(ItemRecord item) {
  if (item.modalities.rows() != modalities_ || item.modalities.cols() != dim_) {
    fail(ErrorCode::kDimension, fmt::format("item '{}' modality stack {} does not match {}", item.item_id,
                                            item.modalities.shape_string(), shape_string(modalities_, dim_)));
  }
  if (!item.title_emb.empty() && item.title_emb.size() != dim_) {
    fail(ErrorCode::kDimension, fmt::format("item '{}' title_emb has dimension {}, expected {}",
                                            item.item_id, item.title_emb.size(), dim_));
  }
  if (item.cf_emb.size() != dim_) {
    fail(ErrorCode::kDimension, fmt::format("item '{}' cf_emb has dimension {}, expected {}",
                                            item.item_id, item.cf_emb.size(), dim_));
  }
  if (!item.modalities.all_finite() || !finite(item.title_emb) || !finite(item.cf_emb)) {
    fail(ErrorCode::kNonFinite, fmt::format("item '{}' has non-finite values", item.item_id));
  }
  if (index_.count(item.item_id)) fail(ErrorCode::kParse, fmt::format("duplicate item id '{}'", item.item_id));
  const std::size_t idx = items_.size();
  index_.emplace(item.item_id, idx);
  items_.push_back(std::move(item));
  return idx;
}

std::optional<std::size_t> Catalog::find(const std::string& item_id) const {
  if (auto it = index_.find(item_id); it != index_.end()) return it->second;
  return std::nullopt;
}

Catalog load_catalog(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  Catalog catalog;
  bool initialized = false;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      parse_fail(path, line, e.what());
    }
    if (!j.is_object() || !j.contains("item_id") || !j.at("item_id").is_string())
      parse_fail(path, line, "record needs a string 'item_id'");
    if (!j.contains("modalities") || !j.at("modalities").is_array() || j.at("modalities").empty())
      parse_fail(path, line, "record needs a non-empty 'modalities' array");

    const auto& mods = j.at("modalities");
    const std::size_t m = mods.size();
    std::vector<double> flat;
    std::size_t d = 0;
    for (const auto& row : mods) {
      if (!row.is_array()) parse_fail(path, line, "modality rows must be arrays");
      if (d == 0) d = row.size();
      if (row.size() != d || d == 0) parse_fail(path, line, "modality rows have unequal dimension");
      for (const auto& x : row) {
        if (!x.is_number()) parse_fail(path, line, "modality row holds a non-number");
        flat.push_back(x.get<double>());
      }
    }
    if (!initialized) {
      catalog = Catalog(m, d);
      initialized = true;
    } else if (m != catalog.modalities() || d != catalog.dim()) {
      parse_fail(path, line, fmt::format("modality stack {} does not match catalog {}",
                                         shape_string(m, d), shape_string(catalog.modalities(), catalog.dim())));
    }

    ItemRecord item;
    item.item_id = j.at("item_id").get<std::string>();
    item.modalities = Tensor(m, d, std::move(flat));
    item.title_emb = read_vector(j, "title_emb", d, path, line);
    item.cf_emb = read_vector(j, "cf_emb", d, path, line);
    if (item.cf_emb.size() != d) parse_fail(path, line, "cf_emb must have the catalog dimension");
    if (!j.contains("title_token_count") || !j.at("title_token_count").is_number_unsigned())
      parse_fail(path, line, "record needs an unsigned 'title_token_count'");
    item.title_token_count = j.at("title_token_count").get<std::size_t>();
    if (j.contains("genre_label")) item.genre_label = j.at("genre_label").get<int>();
    if (j.contains("subcluster")) item.subcluster = j.at("subcluster").get<int>();
    if (j.contains("cold_start")) item.cold_start = j.at("cold_start").get<bool>();
    try {
      catalog.add(std::move(item));
    } catch (const Error& e) {
      parse_fail(path, line, e.what());
    }
  }
  return catalog;
}

std::vector<UserRecord> load_interactions(const std::filesystem::path& path, const Catalog& catalog) {
  std::ifstream in = open_input(path);
  std::vector<UserRecord> users;
  std::unordered_set<std::string> ids;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      parse_fail(path, line, e.what());
    }
    if (!j.is_object() || !j.contains("user_id") || !j.at("user_id").is_string())
      parse_fail(path, line, "record needs a string 'user_id'");
    if (!j.contains("items") || !j.at("items").is_array()) parse_fail(path, line, "record needs an 'items' array");
    if (!j.contains("timestamps") || !j.at("timestamps").is_array())
      parse_fail(path, line, "record needs a 'timestamps' array");
    UserRecord user;
    user.user_id = j.at("user_id").get<std::string>();
    if (!ids.insert(user.user_id).second) parse_fail(path, line, fmt::format("duplicate user id '{}'", user.user_id));
    for (const auto& id : j.at("items")) {
      if (!id.is_string()) parse_fail(path, line, "item ids must be strings");
      const auto idx = catalog.find(id.get<std::string>());
      if (!idx) parse_fail(path, line, fmt::format("unknown item_id '{}'", id.get<std::string>()));
      user.items.push_back(*idx);
    }
    for (const auto& ts : j.at("timestamps")) {
      if (!ts.is_number_integer()) parse_fail(path, line, "timestamps must be integers");
      user.timestamps.push_back(ts.get<std::int64_t>());
    }
    if (user.timestamps.size() != user.items.size())
      parse_fail(path, line, "items and timestamps differ in length");
    for (std::size_t t = 1; t < user.timestamps.size(); ++t) {
      if (user.timestamps[t] < user.timestamps[t - 1])
        parse_fail(path, line, fmt::format("timestamps decrease at position {}", t));
    }
    users.push_back(std::move(user));
  }
  return users;
}

void write_catalog(const std::filesystem::path& path, const Catalog& catalog) {
  std::ofstream out = open_output(path);
  for (const ItemRecord& item : catalog.items()) {
    json mods = json::array();
    for (std::size_t m = 0; m < item.modalities.rows(); ++m) {
      const auto row = item.modalities.row_span(m);
      mods.push_back(std::vector<double>(row.begin(), row.end()));
    }
    json j = {{"item_id", item.item_id},
              {"modalities", std::move(mods)},
              {"title_emb", item.title_emb},
              {"cf_emb", item.cf_emb},
              {"title_token_count", item.title_token_count}};
    if (item.genre_label) j["genre_label"] = *item.genre_label;
    if (item.subcluster) j["subcluster"] = *item.subcluster;
    if (item.cold_start) j["cold_start"] = true;
    out << j.dump() << '\n';
  }
  if (!out) fail(ErrorCode::kIo, fmt::format("write failed: {}", path.string()));
}

void write_interactions(const std::filesystem::path& path, std::span<const UserRecord> users,
                        const Catalog& catalog) {
  std::ofstream out = open_output(path);
  for (const UserRecord& user : users) {
    std::vector<std::string> ids;
    ids.reserve(user.items.size());
    for (std::size_t i : user.items) ids.push_back(catalog[i].item_id);
    const json j = {{"user_id", user.user_id}, {"items", ids}, {"timestamps", user.timestamps}};
    out << j.dump() << '\n';
  }
  if (!out) fail(ErrorCode::kIo, fmt::format("write failed: {}", path.string()));
}

CorpusStats corpus_stats(const Dataset& data) {
  CorpusStats s;
  s.users = data.users.size();
  s.items = data.catalog.size();
  for (const auto& u : data.users) s.interactions += u.items.size();
  if (s.users > 0) s.average_length = static_cast<double>(s.interactions) / static_cast<double>(s.users);
  if (s.users > 0 && s.items > 0) {
    s.sparsity = 1.0 - static_cast<double>(s.interactions) /
                           (static_cast<double>(s.users) * static_cast<double>(s.items));
  }
  return s;
}

}  // namespace mufasa
