#include "srkd/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>

#include <json.hpp>

#include "srkd/error.hpp"

namespace srkd {

namespace {

using nlohmann::json;

std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' ||
                     s[e - 1] == '\n'))
        --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_by(const std::string& line, const std::string& sep) {
    std::vector<std::string> parts;
    size_t pos = 0;
    while (true) {
        size_t next = line.find(sep, pos);
        if (next == std::string::npos) {
            parts.push_back(line.substr(pos));
            break;
        }
        parts.push_back(line.substr(pos, next - pos));
        pos = next + sep.size();
    }
    return parts;
}

int64_t parse_timestamp(const std::string& field, size_t line_no) {
    std::string t = trim(field);
    int64_t value = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (ec != std::errc{} || ptr != t.data() + t.size() || value < 0)
        throw DataError("line " + std::to_string(line_no) +
                        ": bad timestamp '" + field + "'");
    return value;
}

// little-endian scalar IO
void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_i32(std::string& out, int32_t v) { put_u32(out, static_cast<uint32_t>(v)); }

uint32_t get_u32(const std::string& in, size_t& pos) {
    if (pos + 4 > in.size()) throw FormatError("dataset file truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += 4;
    return v;
}

int32_t get_i32(const std::string& in, size_t& pos) {
    return static_cast<int32_t>(get_u32(in, pos));
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::string out((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
    if (f.bad()) throw IoError("read failed on " + path);
    return out;
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot create " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed on " + path);
}

}  // namespace

std::vector<Interaction> load_interactions(const std::string& path,
                                           const std::string& format) {
    if (format != "ml-1m" && format != "tsv")
        throw ParamError("unknown input format '" + format +
                         "' (expected ml-1m or tsv)");
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);

    std::vector<Interaction> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        Interaction rec;
        if (format == "ml-1m") {
            auto parts = split_by(line, "::");
            if (parts.size() != 4)
                throw DataError("line " + std::to_string(line_no) +
                                ": expected user::item::rating::timestamp");
            rec.user = trim(parts[0]);
            rec.item = trim(parts[1]);
            // parts[2] is the rating; treated as implicit feedback and dropped
            rec.timestamp = parse_timestamp(parts[3], line_no);
        } else {
            auto parts = split_by(line, "\t");
            if (parts.size() != 3)
                throw DataError("line " + std::to_string(line_no) +
                                ": expected user<TAB>item<TAB>timestamp");
            rec.user = trim(parts[0]);
            rec.item = trim(parts[1]);
            rec.timestamp = parse_timestamp(parts[2], line_no);
        }
        if (rec.user.empty() || rec.item.empty())
            throw DataError("line " + std::to_string(line_no) + ": empty user or item id");
        out.push_back(std::move(rec));
    }
    if (f.bad()) throw IoError("read failed on " + path);
    return out;
}

std::vector<Interaction> filter_min_count(std::vector<Interaction> interactions,
                                          size_t min_count) {
    if (min_count < 1) throw ParamError("min_count must be >= 1");
    while (true) {
        std::unordered_map<std::string, size_t> users, items;
        for (const auto& r : interactions) {
            ++users[r.user];
            ++items[r.item];
        }
        std::vector<Interaction> kept;
        kept.reserve(interactions.size());
        for (auto& r : interactions)
            if (users[r.user] >= min_count && items[r.item] >= min_count)
                kept.push_back(std::move(r));
        bool stable = kept.size() == interactions.size();
        interactions = std::move(kept);
        if (stable) return interactions;
    }
}

std::vector<UserSequence> build_sequences(const std::vector<Interaction>& interactions) {
    std::unordered_map<std::string, std::vector<std::pair<int64_t, std::string>>> per_user;
    for (const auto& r : interactions)
        per_user[r.user].emplace_back(r.timestamp, r.item);

    std::vector<UserSequence> out;
    out.reserve(per_user.size());
    for (auto& [user, events] : per_user) {
        std::stable_sort(events.begin(), events.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        UserSequence seq;
        seq.user = user;
        for (auto& [ts, item] : events) seq.items.push_back(std::move(item));
        out.push_back(std::move(seq));
    }
    std::sort(out.begin(), out.end(),
              [](const UserSequence& a, const UserSequence& b) { return a.user < b.user; });
    return out;
}

TokenMap TokenMap::make(std::vector<std::string> items, uint64_t seed) {
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    if (items.empty()) throw ContractError("token map needs a nonempty item set");

    std::vector<int32_t> tokens(items.size());
    for (size_t i = 0; i < tokens.size(); ++i)
        tokens[i] = kFirstItemToken + static_cast<int32_t>(i);
    Rng rng(Rng::derive_seed(seed, rng_stream::token_map));
    for (size_t i = tokens.size() - 1; i > 0; --i) {
        size_t j = rng.next_below(i + 1);
        std::swap(tokens[i], tokens[j]);
    }

    TokenMap map;
    map.seed_ = seed;
    map.item_of_token_.resize(items.size());
    for (size_t i = 0; i < items.size(); ++i) {
        map.token_of_item_[items[i]] = tokens[i];
        map.item_of_token_[static_cast<size_t>(tokens[i]) - kFirstItemToken] = items[i];
    }
    return map;
}

std::optional<int32_t> TokenMap::lookup(const std::string& item) const {
    auto it = token_of_item_.find(item);
    if (it == token_of_item_.end()) return std::nullopt;
    return it->second;
}

int32_t TokenMap::token(const std::string& item) const {
    auto t = lookup(item);
    if (!t) throw DataError("unknown item id '" + item + "'");
    return *t;
}

const std::string& TokenMap::item(int32_t token) const {
    if (token < kFirstItemToken ||
        static_cast<size_t>(token - kFirstItemToken) >= item_of_token_.size())
        throw DataError("token " + std::to_string(token) + " is not a real item");
    return item_of_token_[static_cast<size_t>(token - kFirstItemToken)];
}

void TokenMap::save(const std::string& path) const {
    json items = json::object();
    for (size_t i = 0; i < item_of_token_.size(); ++i)
        items[item_of_token_[i]] = kFirstItemToken + static_cast<int32_t>(i);
    json doc;
    doc["seed"] = seed_;
    doc["items"] = items;
    write_file(path, doc.dump());
}

TokenMap TokenMap::load(const std::string& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw FormatError("token map " + path + ": " + e.what());
    }
    if (!doc.is_object() || !doc.contains("seed") || !doc.contains("items"))
        throw FormatError("token map " + path + ": missing seed/items");
    TokenMap map;
    map.seed_ = doc["seed"].get<uint64_t>();
    const auto& items = doc["items"];
    map.item_of_token_.resize(items.size());
    std::vector<bool> seen(items.size(), false);
    for (auto it = items.begin(); it != items.end(); ++it) {
        int64_t tok = it.value().get<int64_t>();
        int64_t slot = tok - kFirstItemToken;
        if (slot < 0 || slot >= static_cast<int64_t>(items.size()) || seen[slot])
            throw FormatError("token map " + path + ": tokens are not a bijection");
        seen[slot] = true;
        map.item_of_token_[static_cast<size_t>(slot)] = it.key();
        map.token_of_item_[it.key()] = static_cast<int32_t>(tok);
    }
    return map;
}

std::vector<int32_t> SplitDataset::history(size_t user_index, bool include_val) const {
    const auto& view = train.at(user_index);
    std::vector<int32_t> out;
    for (int32_t t : view)
        if (t != kPadToken) out.push_back(t);
    if (include_val) out.push_back(val_target.at(user_index));
    return out;
}

SplitDataset split_leave_one_out(const std::vector<UserSequence>& sequences,
                                 size_t max_len, const TokenMap& token_map) {
    if (max_len < 1) throw ParamError("max_len must be >= 1");
    SplitDataset ds;
    ds.max_len = max_len;
    ds.vocab_size = token_map.vocab_size();
    ds.seed = token_map.seed();
    for (const auto& seq : sequences) {
        if (seq.items.size() < 3) {
            ++ds.dropped_users;
            continue;
        }
        std::vector<int32_t> tokens;
        tokens.reserve(seq.items.size());
        for (const auto& item : seq.items) tokens.push_back(token_map.token(item));

        size_t prefix_len = tokens.size() - 2;
        size_t keep = std::min(prefix_len, max_len);
        std::vector<int32_t> view(max_len, kPadToken);
        for (size_t i = 0; i < keep; ++i)
            view[max_len - keep + i] = tokens[prefix_len - keep + i];

        ds.user_ids.push_back(seq.user);
        ds.train.push_back(std::move(view));
        ds.val_target.push_back(tokens[prefix_len]);
        ds.test_target.push_back(tokens[prefix_len + 1]);
    }
    return ds;
}

void save_dataset(const SplitDataset& dataset, const std::string& path) {
    json header;
    header["version"] = 1;
    header["vocab_size"] = dataset.vocab_size;
    header["max_len"] = dataset.max_len;
    header["seed"] = dataset.seed;
    header["users"] = dataset.user_count();
    header["format"] = dataset.format;
    std::string header_bytes = header.dump();

    std::string out;
    out += "SRDS1";
    put_u32(out, static_cast<uint32_t>(header_bytes.size()));
    out += header_bytes;
    for (size_t u = 0; u < dataset.user_count(); ++u) {
        for (int32_t t : dataset.train[u]) put_i32(out, t);
        put_i32(out, dataset.val_target[u]);
        put_i32(out, dataset.test_target[u]);
    }
    write_file(path, out);
}

SplitDataset load_dataset(const std::string& path) {
    std::string bytes = read_file(path);
    if (bytes.size() < 5 || bytes.compare(0, 5, "SRDS1") != 0)
        throw FormatError(path + ": bad magic, not an SRDS1 dataset");
    size_t pos = 5;
    uint32_t header_len = get_u32(bytes, pos);
    if (pos + header_len > bytes.size()) throw FormatError(path + ": truncated header");
    json header;
    try {
        header = json::parse(bytes.substr(pos, header_len));
    } catch (const json::exception& e) {
        throw FormatError(path + ": bad header json: " + e.what());
    }
    pos += header_len;

    SplitDataset ds;
    try {
        ds.vocab_size = header.at("vocab_size").get<size_t>();
        ds.max_len = header.at("max_len").get<size_t>();
        ds.seed = header.at("seed").get<uint64_t>();
        ds.format = header.value("format", std::string{});
        size_t users = header.at("users").get<size_t>();
        size_t need = users * (ds.max_len + 2) * 4;
        if (bytes.size() - pos != need)
            throw FormatError(path + ": payload size mismatch");
        ds.train.reserve(users);
        for (size_t u = 0; u < users; ++u) {
            std::vector<int32_t> view(ds.max_len);
            for (size_t i = 0; i < ds.max_len; ++i) view[i] = get_i32(bytes, pos);
            ds.train.push_back(std::move(view));
            ds.val_target.push_back(get_i32(bytes, pos));
            ds.test_target.push_back(get_i32(bytes, pos));
        }
        ds.user_ids.resize(users);  // ids are not persisted
    } catch (const json::exception& e) {
        throw FormatError(path + ": bad header field: " + e.what());
    }
    return ds;
}

Prepared prepare_dataset(const PrepareOptions& options) {
    auto interactions = load_interactions(options.input_path, options.format);
    interactions = filter_min_count(std::move(interactions), options.min_count);
    if (interactions.empty())
        throw DataError("no interactions survive min-count filtering");
    auto sequences = build_sequences(interactions);

    std::vector<std::string> items;
    items.reserve(interactions.size());
    for (const auto& r : interactions) items.push_back(r.item);
    TokenMap map = TokenMap::make(std::move(items), options.seed);

    SplitDataset ds = split_leave_one_out(sequences, options.max_len, map);
    if (ds.user_count() == 0) throw DataError("no users with >= 3 interactions");
    ds.format = options.format;
    ds.seed = options.seed;
    return {std::move(ds), std::move(map)};
}

}  // namespace srkd
