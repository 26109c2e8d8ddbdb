#pragma once
// Image embedders for the external (CLIP-style) validation path. The mock is
// a deterministic content embedding (downsampled grayscale), good enough for
// tests and the demo; the command adapter plugs in a real encoder.

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conceptfaith/image.hpp"

namespace conceptfaith {

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::string id() const = 0;
    virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& paths) const = 0;
};

class MockEmbedder : public Embedder {
public:
    explicit MockEmbedder(int grid = 8) : grid_(grid) {}

    std::string id() const override { return "mock-gray" + std::to_string(grid_); }

    std::vector<std::vector<double>> embed(const std::vector<std::string>& paths) const override {
        std::vector<std::vector<double>> out;
        out.reserve(paths.size());
        for (const auto& p : paths) {
            const Image img = read_pnm(p);
            out.push_back(resize_gray(to_gray(img), img.width, img.height, grid_, grid_));
        }
        return out;
    }

private:
    int grid_;
};

// Protocol: <command> <paths_file> <out_json>, where out_json maps each input
// path to its embedding: {"embeddings": {"<path>": [..], ...}}.
class CommandEmbedder : public Embedder {
public:
    explicit CommandEmbedder(std::string command) : command_(std::move(command)) {}

    std::string id() const override { return "command"; }

    std::vector<std::vector<double>> embed(const std::vector<std::string>& paths) const override {
        const fs::path work =
            fs::temp_directory_path() / ("cf_embed_" + std::to_string(splitmix64(fnv1a64(command_))));
        fs::create_directories(work);
        const fs::path list = work / "paths.txt";
        const fs::path out_json = work / "embeddings.json";
        std::string text;
        for (const auto& p : paths) text += p + "\n";
        write_file(list, text);
        const std::string cmd = command_ + " '" + list.string() + "' '" + out_json.string() + "'";
        const int rc = std::system(cmd.c_str());
        if (rc != 0 || !fs::exists(out_json)) {
            fs::remove_all(work);
            throw IoError("embedder command failed (exit " + std::to_string(rc) + ")");
        }
        nlohmann::json doc = nlohmann::json::parse(read_file(out_json));
        fs::remove_all(work);
        std::vector<std::vector<double>> out;
        for (const auto& p : paths) {
            if (!doc.at("embeddings").contains(p))
                throw ValidationError("embedder output missing path " + p);
            out.push_back(doc["embeddings"][p].get<std::vector<double>>());
        }
        return out;
    }

private:
    std::string command_;
};

inline std::unique_ptr<Embedder> make_embedder(const nlohmann::json& cfg) {
    const std::string kind = cfg.value("kind", "mock");
    if (kind == "mock") return std::make_unique<MockEmbedder>(cfg.value("grid", 8));
    if (kind == "command") return std::make_unique<CommandEmbedder>(cfg.at("command").get<std::string>());
    throw ParseError("unknown embedder kind '" + kind + "'");
}

}  // namespace conceptfaith
