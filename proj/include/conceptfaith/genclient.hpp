#pragma once
// T2I generation and I2I concept-removal jobs over pluggable providers.
//
// Three adapters: a deterministic mock (procedural images keyed by
// hash(prompt, seed, index)), a local command runner, and a remote HTTP
// client (API key via environment variable). Jobs write images with
// deterministic names plus an append-only manifest.jsonl, and can resume
// from a partial manifest.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "conceptfaith/catalog.hpp"
#include "conceptfaith/procgen.hpp"
#include "conceptfaith/prompts.hpp"

namespace conceptfaith {

struct ManifestRecord {
    std::string filename;
    std::size_t index = 0;
    std::string prompt;
    std::string provider;
    std::int64_t seed = 0;
    std::optional<std::string> source_image;
};

namespace detail {

inline nlohmann::json manifest_to_json(const ManifestRecord& rec) {
    nlohmann::json j{{"filename", rec.filename}, {"index", rec.index},      {"prompt", rec.prompt},
                     {"provider", rec.provider}, {"seed", rec.seed}};
    if (rec.source_image) j["source_image"] = *rec.source_image;
    return j;
}

inline ManifestRecord manifest_from_json(const nlohmann::json& j) {
    ManifestRecord rec;
    rec.filename = j.at("filename").get<std::string>();
    rec.index = j.at("index").get<std::size_t>();
    rec.prompt = j.at("prompt").get<std::string>();
    rec.provider = j.at("provider").get<std::string>();
    rec.seed = j.at("seed").get<std::int64_t>();
    if (j.contains("source_image")) rec.source_image = j["source_image"].get<std::string>();
    return rec;
}

inline std::string base64_encode(const std::string& in) {
    static const char* tbl = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((in.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < in.size(); i += 3) {
        std::uint32_t v = static_cast<unsigned char>(in[i]) << 16;
        if (i + 1 < in.size()) v |= static_cast<unsigned char>(in[i + 1]) << 8;
        if (i + 2 < in.size()) v |= static_cast<unsigned char>(in[i + 2]);
        out += tbl[(v >> 18) & 63];
        out += tbl[(v >> 12) & 63];
        out += i + 1 < in.size() ? tbl[(v >> 6) & 63] : '=';
        out += i + 2 < in.size() ? tbl[v & 63] : '=';
    }
    return out;
}

inline std::string base64_decode(const std::string& in) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::string out;
    int buf = 0, bits = 0;
    for (char c : in) {
        const int v = val(c);
        if (v < 0) continue;
        buf = (buf << 6) | v;
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out += static_cast<char>((buf >> bits) & 0xff);
        }
    }
    return out;
}

}  // namespace detail

// Appends complete records only; each record is one write of one full line,
// and image files are renamed into place before their record is appended.
class ManifestWriter {
public:
    explicit ManifestWriter(const fs::path& dir) : path_(dir / "manifest.jsonl") {
        fs::create_directories(dir);
    }

    void append(const ManifestRecord& rec) {
        std::lock_guard<std::mutex> lock(mu_);
        std::ofstream out(path_, std::ios::app | std::ios::binary);
        if (!out) throw IoError("cannot append manifest " + path_.string());
        out << detail::manifest_to_json(rec).dump() << "\n";
        out.flush();
    }

private:
    fs::path path_;
    std::mutex mu_;
};

inline std::vector<ManifestRecord> load_manifest(const fs::path& dir) {
    std::vector<ManifestRecord> out;
    const fs::path path = dir / "manifest.jsonl";
    if (!fs::exists(path)) return out;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        try {
            out.push_back(detail::manifest_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("manifest " + path.string() + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Provider interfaces.

class GenProvider {
public:
    virtual ~GenProvider() = default;
    virtual std::string id() const = 0;
    // True when items can run independently (worker pool + per-item retries);
    // false for batch-oriented adapters like the local command runner.
    virtual bool per_image() const { return true; }
    virtual std::string generate_one(const std::string& prompt, std::int64_t seed, std::size_t index) = 0;
    // Batch fallback used for non-per-image providers: returns whatever
    // completed; indices not in the map failed.
    virtual std::map<std::size_t, std::string> generate_batch(const std::string& prompt, std::int64_t seed,
                                                              const std::vector<std::size_t>& indices) {
        std::map<std::size_t, std::string> out;
        for (std::size_t idx : indices) out[idx] = generate_one(prompt, seed, idx);
        return out;
    }
};

class EditProvider {
public:
    virtual ~EditProvider() = default;
    virtual std::string id() const = 0;
    virtual std::string edit_one(const std::string& prompt, const std::string& source_bytes, std::int64_t seed,
                                 std::size_t index) = 0;
};

// Deterministic mock: image is a pure function of hash(prompt, seed, index).
// The rendered family follows the concept name embedded in the prompt.
class MockProvider : public GenProvider {
public:
    explicit MockProvider(ProcgenOptions options = {64, 0.6}) : options_(options) {}

    std::string id() const override { return "mock"; }

    std::string generate_one(const std::string& prompt, std::int64_t seed, std::size_t index) override {
        const std::uint64_t key =
            hash_combine(fnv1a64(prompt), hash_combine(static_cast<std::uint64_t>(seed), index));
        return encode_pnm(render_texture(family_from_text(prompt), key, options_));
    }

private:
    ProcgenOptions options_;
};

// Identity editor: output bytes equal input bytes.
class IdentityEditor : public EditProvider {
public:
    std::string id() const override { return "identity"; }
    std::string edit_one(const std::string&, const std::string& source_bytes, std::int64_t, std::size_t) override {
        return source_bytes;
    }
};

// Procedural eraser: blends the source toward its mean level.
class MockEditor : public EditProvider {
public:
    explicit MockEditor(double strength = 1.0) : strength_(strength) {}

    std::string id() const override { return "erase"; }

    std::string edit_one(const std::string& prompt, const std::string& source_bytes, std::int64_t seed,
                         std::size_t index) override {
        const Image src = decode_pnm(source_bytes, "editor input");
        const std::uint64_t key =
            hash_combine(fnv1a64(prompt), hash_combine(static_cast<std::uint64_t>(seed), index));
        return encode_pnm(erase_texture(src, strength_, key));
    }

private:
    double strength_;
};

// Local pipeline adapters. Generation protocol:
//   <command> <prompt_file> <out_dir> <seed> <index_file>
// where index_file holds one decimal index per line and the command writes
// <out_dir>/<index>.pnm for each. Editing protocol:
//   <command> <prompt_file> <src_file> <dst_file> <seed>
class LocalCommandProvider : public GenProvider {
public:
    LocalCommandProvider(std::string provider_id, std::string command)
        : id_(std::move(provider_id)), command_(std::move(command)) {}

    std::string id() const override { return id_; }
    bool per_image() const override { return false; }

    std::string generate_one(const std::string& prompt, std::int64_t seed, std::size_t index) override {
        auto got = generate_batch(prompt, seed, {index});
        if (!got.count(index)) throw ProviderError("local command produced no output for index " + std::to_string(index), 0);
        return got[index];
    }

    std::map<std::size_t, std::string> generate_batch(const std::string& prompt, std::int64_t seed,
                                                      const std::vector<std::size_t>& indices) override {
        const fs::path work = fs::temp_directory_path() /
                              ("cf_local_" + std::to_string(splitmix64(fnv1a64(prompt) ^ seed)));
        fs::create_directories(work);
        const fs::path prompt_file = work / "prompt.txt";
        const fs::path index_file = work / "indices.txt";
        write_file(prompt_file, prompt);
        std::string idx_text;
        for (std::size_t i : indices) idx_text += std::to_string(i) + "\n";
        write_file(index_file, idx_text);

        const std::string cmd = command_ + " '" + prompt_file.string() + "' '" + work.string() + "' " +
                                std::to_string(seed) + " '" + index_file.string() + "'";
        const int rc = std::system(cmd.c_str());

        std::map<std::size_t, std::string> out;
        for (std::size_t i : indices) {
            const fs::path f = work / (std::to_string(i) + ".pnm");
            if (fs::exists(f)) out[i] = read_file(f);
        }
        fs::remove_all(work);
        if (rc != 0 && out.size() < indices.size())
            return out;  // partial batch; runner reports/retries the rest
        return out;
    }

private:
    std::string id_;
    std::string command_;
};

class LocalCommandEditor : public EditProvider {
public:
    LocalCommandEditor(std::string editor_id, std::string command)
        : id_(std::move(editor_id)), command_(std::move(command)) {}

    std::string id() const override { return id_; }

    std::string edit_one(const std::string& prompt, const std::string& source_bytes, std::int64_t seed,
                         std::size_t index) override {
        const fs::path work = fs::temp_directory_path() /
                              ("cf_edit_" + std::to_string(splitmix64(fnv1a64(source_bytes) ^ index)));
        fs::create_directories(work);
        const fs::path prompt_file = work / "prompt.txt";
        const fs::path src = work / "src.pnm";
        const fs::path dst = work / "dst.pnm";
        write_file(prompt_file, prompt);
        write_file(src, source_bytes);
        const std::string cmd = command_ + " '" + prompt_file.string() + "' '" + src.string() + "' '" +
                                dst.string() + "' " + std::to_string(seed);
        const int rc = std::system(cmd.c_str());
        if (rc != 0 || !fs::exists(dst)) {
            fs::remove_all(work);
            throw IoError("local edit command failed (exit " + std::to_string(rc) + ")");
        }
        std::string bytes = read_file(dst);
        fs::remove_all(work);
        return bytes;
    }

private:
    std::string id_;
    std::string command_;
};

struct HttpProviderConfig {
    std::string base_url;                               // e.g. http://127.0.0.1:8080
    std::string generate_path = "/v1/images/generate";  // POST {prompt, seed, index}
    std::string edit_path = "/v1/images/edit";          // POST {prompt, seed, index, source_b64}
    std::string api_key_env = "CONCEPTFAITH_API_KEY";
    int timeout_seconds = 120;
};

// Remote HTTP adapter. The response body is either raw PNM bytes or JSON
// {"image_b64": "..."}.
class HttpProvider : public GenProvider, public EditProvider {
public:
    HttpProvider(std::string provider_id, HttpProviderConfig config)
        : id_(std::move(provider_id)), config_(std::move(config)) {}

    std::string id() const override { return id_; }

    std::string generate_one(const std::string& prompt, std::int64_t seed, std::size_t index) override {
        nlohmann::json body{{"prompt", prompt}, {"seed", seed}, {"index", index}};
        return post(config_.generate_path, body);
    }

    std::string edit_one(const std::string& prompt, const std::string& source_bytes, std::int64_t seed,
                         std::size_t index) override {
        nlohmann::json body{{"prompt", prompt},
                            {"seed", seed},
                            {"index", index},
                            {"source_b64", detail::base64_encode(source_bytes)}};
        return post(config_.edit_path, body);
    }

private:
    std::string post(const std::string& path, const nlohmann::json& body);

    std::string id_;
    HttpProviderConfig config_;
};

inline std::string HttpProvider::post(const std::string& path, const nlohmann::json& body) {
    httplib::Client client(config_.base_url);
    client.set_connection_timeout(config_.timeout_seconds);
    client.set_read_timeout(config_.timeout_seconds);
    httplib::Headers headers;
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
        headers.emplace("Authorization", std::string("Bearer ") + key);
    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res)
        throw IoError("provider '" + id_ + "': no response from " + config_.base_url + path + " (" +
                      httplib::to_string(res.error()) + ")");
    if (res->status != 200)
        throw IoError("provider '" + id_ + "': HTTP " + std::to_string(res->status) + " from " + path);
    if (!res->body.empty() && res->body.front() == '{') {
        try {
            const auto doc = nlohmann::json::parse(res->body);
            return detail::base64_decode(doc.at("image_b64").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("provider '" + id_ + "': bad JSON response: " + e.what());
        }
    }
    return res->body;
}

// ---------------------------------------------------------------------------
// Jobs.

struct GenerationJob {
    ConceptSpec concept_spec;
    std::string provider;
    std::size_t count = 0;
    std::int64_t seed = 0;
    std::string output_dir;
};

struct RemovalJob {
    ConceptSpec concept_spec;
    std::string editor;
    ImageSet class_images;
    std::string output_dir;
};

struct JobOptions {
    int attempts = 3;
    int backoff_ms = 100;  // doubles per attempt
    int workers = 1;
    int min_interval_ms = 0;  // provider rate limit
    bool resume = false;
};

namespace detail {

inline std::string sniff_pnm_extension(const std::string& bytes, const std::string& what) {
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return ".pgm";
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return ".ppm";
    throw ProviderError(what + " returned a non-PNM payload", 0);
}

// Shared per-provider pacing.
class RateLimiter {
public:
    explicit RateLimiter(int min_interval_ms) : interval_(min_interval_ms) {}

    void wait() {
        if (interval_.count() <= 0) return;
        std::chrono::steady_clock::time_point wake;
        {
            std::lock_guard<std::mutex> lock(mu_);
            const auto now = std::chrono::steady_clock::now();
            next_ = std::max(next_, now);
            wake = next_;
            next_ += interval_;
        }
        std::this_thread::sleep_until(wake);
    }

private:
    std::chrono::milliseconds interval_;
    std::chrono::steady_clock::time_point next_ = std::chrono::steady_clock::now();
    std::mutex mu_;
};

inline std::set<std::size_t> completed_indices(const fs::path& dir) {
    std::set<std::size_t> done;
    for (const auto& rec : load_manifest(dir))
        if (fs::exists(dir / rec.filename)) done.insert(rec.index);
    return done;
}

inline void prepare_output_dir(const fs::path& dir, bool resume) {
    if (fs::exists(dir / "manifest.jsonl") && !resume)
        throw ValidationError("output dir " + dir.string() +
                              " already holds a manifest; pass resume to continue the job");
    fs::create_directories(dir);
}

inline ImageSet finished_set(const ImageSetKey& key, const fs::path& dir, std::int64_t seed) {
    ImageSet set;
    set.key = key;
    set.paths = list_files(dir, image_extensions());
    set.seed = seed;
    return set;
}

}  // namespace detail

// Runs a generation job to completion. Writes gen_0001... files plus the
// manifest; throws ProviderError carrying the completed count when the
// provider fails permanently, leaving the job resumable.
inline ImageSet generate_concept_images(const GenerationJob& job, GenProvider& provider,
                                        const JobOptions& options = {}) {
    require(job.count >= 1, "generation job for '" + job.concept_spec.name + "' has count 0");
    const fs::path dir(job.output_dir);
    detail::prepare_output_dir(dir, options.resume);

    const std::string prompt = render_generation_prompt(job.concept_spec);
    const int width = std::max(4, static_cast<int>(std::to_string(job.count).size()));
    ManifestWriter manifest(dir);
    detail::RateLimiter limiter(options.min_interval_ms);

    const std::set<std::size_t> done = detail::completed_indices(dir);
    std::vector<std::size_t> remaining;
    for (std::size_t i = 1; i <= job.count; ++i)
        if (!done.count(i)) remaining.push_back(i);

    std::atomic<std::size_t> completed{0};
    auto store = [&](std::size_t index, const std::string& bytes) {
        const std::string ext = detail::sniff_pnm_extension(bytes, "provider " + provider.id());
        const std::string name = "gen_" + zero_pad(index, width) + ext;
        write_file_atomic(dir / name, bytes);
        manifest.append({name, index, prompt, provider.id(), job.seed, std::nullopt});
        ++completed;
    };

    std::string last_error;
    if (provider.per_image()) {
        std::mutex err_mu;
        std::atomic<std::size_t> cursor{0};
        auto worker = [&] {
            for (;;) {
                const std::size_t slot = cursor.fetch_add(1);
                if (slot >= remaining.size()) return;
                const std::size_t index = remaining[slot];
                for (int attempt = 0; attempt < options.attempts; ++attempt) {
                    try {
                        limiter.wait();
                        store(index, provider.generate_one(prompt, job.seed, index));
                        break;
                    } catch (const std::exception& e) {
                        std::lock_guard<std::mutex> lock(err_mu);
                        last_error = e.what();
                        if (attempt + 1 < options.attempts)
                            std::this_thread::sleep_for(std::chrono::milliseconds(options.backoff_ms << attempt));
                    }
                }
            }
        };
        const int n_workers = std::max(1, options.workers);
        std::vector<std::thread> pool;
        for (int i = 1; i < n_workers; ++i) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
    } else {
        std::vector<std::size_t> todo = remaining;
        for (int attempt = 0; attempt < options.attempts && !todo.empty(); ++attempt) {
            if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(options.backoff_ms << (attempt - 1)));
            auto got = provider.generate_batch(prompt, job.seed, todo);
            std::vector<std::size_t> still;
            for (std::size_t index : todo) {
                auto it = got.find(index);
                if (it == got.end()) {
                    still.push_back(index);
                } else {
                    store(index, it->second);
                }
            }
            todo = std::move(still);
            if (!todo.empty()) last_error = "batch left " + std::to_string(todo.size()) + " items incomplete";
        }
    }

    const std::size_t total_done = detail::completed_indices(dir).size();
    if (total_done < job.count)
        throw ProviderError("generation for '" + job.concept_spec.name + "' incomplete after " +
                                std::to_string(options.attempts) + " attempts (" + last_error + ")",
                            completed.load());
    return detail::finished_set({job.concept_spec.name, "gen:" + job.provider}, dir, job.seed);
}

// Edits every class image; outputs keep the input ordering and the manifest
// links each output to its source. Per-image failures are retried, then
// reported with the completed count.
inline ImageSet remove_concept_from_images(const RemovalJob& job, EditProvider& editor,
                                           const JobOptions& options = {}) {
    require(!job.class_images.paths.empty(), "removal job for '" + job.concept_spec.name + "' has no class images");
    require(job.class_images.key.id == job.concept_spec.relevant_class,
            "removal job class images are '" + job.class_images.key.id + "' but concept '" +
                job.concept_spec.name + "' expects class '" + job.concept_spec.relevant_class + "'");
    const fs::path dir(job.output_dir);
    detail::prepare_output_dir(dir, options.resume);

    const std::string prompt = render_removal_prompt(job.concept_spec);
    const int width = std::max(4, static_cast<int>(std::to_string(job.class_images.paths.size()).size()));
    ManifestWriter manifest(dir);
    detail::RateLimiter limiter(options.min_interval_ms);
    const std::set<std::size_t> done = detail::completed_indices(dir);
    const std::int64_t seed = job.class_images.seed.value_or(0);

    std::size_t completed = done.size();
    std::string last_error;
    for (std::size_t i = 0; i < job.class_images.paths.size(); ++i) {
        const std::size_t index = i + 1;
        if (done.count(index)) continue;
        const std::string& src_path = job.class_images.paths[i];
        const std::string src_bytes = read_file(src_path);
        bool ok = false;
        for (int attempt = 0; attempt < options.attempts && !ok; ++attempt) {
            try {
                limiter.wait();
                const std::string bytes = editor.edit_one(prompt, src_bytes, seed, index);
                const std::string ext = detail::sniff_pnm_extension(bytes, "editor " + editor.id());
                const std::string name = "rm_" + zero_pad(index, width) + ext;
                write_file_atomic(dir / name, bytes);
                manifest.append({name, index, prompt, editor.id(), seed, src_path});
                ++completed;
                ok = true;
            } catch (const std::exception& e) {
                last_error = e.what();
                if (attempt + 1 < options.attempts)
                    std::this_thread::sleep_for(std::chrono::milliseconds(options.backoff_ms << attempt));
            }
        }
        if (!ok)
            throw ProviderError("removal for '" + job.concept_spec.name + "' failed at image " +
                                    std::to_string(index) + " (" + last_error + ")",
                                completed);
    }

    ImageSet out = detail::finished_set({job.concept_spec.name, "removed"}, dir, seed);
    require(out.paths.size() == job.class_images.paths.size(), "removal output size mismatch");
    return out;
}

// ---------------------------------------------------------------------------
// Config-driven construction. Provider config JSON:
//   {"kind": "mock", "size": 64, "diversity": 0.6}
//   {"kind": "local", "command": "..."}
//   {"kind": "http", "base_url": "...", "generate_path": ..., "edit_path": ...,
//    "api_key_env": ...}
// Editor config adds {"kind": "identity"} and {"kind": "erase", "strength": x}.

inline std::unique_ptr<GenProvider> make_gen_provider(const std::string& provider_id, const nlohmann::json& cfg) {
    const std::string kind = cfg.value("kind", "mock");
    if (kind == "mock") {
        ProcgenOptions opt;
        opt.size = cfg.value("size", 64);
        opt.diversity = cfg.value("diversity", 0.6);
        return std::make_unique<MockProvider>(opt);
    }
    if (kind == "local") return std::make_unique<LocalCommandProvider>(provider_id, cfg.at("command").get<std::string>());
    if (kind == "http") {
        HttpProviderConfig hc;
        hc.base_url = cfg.at("base_url").get<std::string>();
        hc.generate_path = cfg.value("generate_path", hc.generate_path);
        hc.edit_path = cfg.value("edit_path", hc.edit_path);
        hc.api_key_env = cfg.value("api_key_env", hc.api_key_env);
        return std::make_unique<HttpProvider>(provider_id, hc);
    }
    throw ParseError("unknown provider kind '" + kind + "' for provider '" + provider_id + "'");
}

inline std::unique_ptr<EditProvider> make_edit_provider(const std::string& editor_id, const nlohmann::json& cfg) {
    const std::string kind = cfg.value("kind", "identity");
    if (kind == "identity") return std::make_unique<IdentityEditor>();
    if (kind == "erase") return std::make_unique<MockEditor>(cfg.value("strength", 1.0));
    if (kind == "local") return std::make_unique<LocalCommandEditor>(editor_id, cfg.at("command").get<std::string>());
    if (kind == "http") {
        HttpProviderConfig hc;
        hc.base_url = cfg.at("base_url").get<std::string>();
        hc.generate_path = cfg.value("generate_path", hc.generate_path);
        hc.edit_path = cfg.value("edit_path", hc.edit_path);
        hc.api_key_env = cfg.value("api_key_env", hc.api_key_env);
        return std::make_unique<HttpProvider>(editor_id, hc);
    }
    throw ParseError("unknown editor kind '" + kind + "' for editor '" + editor_id + "'");
}

}  // namespace conceptfaith
