#include "qavlm/eval/ablation.hpp"

#include <algorithm>
#include <fstream>

#include "qavlm/errors.hpp"
#include "qavlm/log.hpp"
#include "qavlm/parallel.hpp"
#include "qavlm/util.hpp"

namespace qavlm::eval {

using nlohmann::json;
namespace fs = std::filesystem;

Manifest Manifest::parse(std::string_view text, const fs::path& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("manifest: ") + e.what(), util::line_of_offset(text, e.byte));
    }
    auto resolve = [&](const std::string& p) {
        const fs::path path(p);
        return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    Manifest m;
    std::set<std::string> ids;
    try {
        for (const auto& s : j.at("samples")) {
            Sample sample;
            sample.sample_id = s.at("sample_id").get<std::string>();
            sample.image = resolve(s.at("image").get<std::string>());
            const auto gt = s.at("ground_truth").get<std::string>();
            if (gt != "good" && gt != "bad") {
                throw ParseError("manifest: sample '" + sample.sample_id +
                                 "' ground_truth must be good or bad");
            }
            sample.ground_truth = assess::verdict_from_string(gt);
            if (sample.sample_id.empty()) throw ParseError("manifest: empty sample_id");
            if (!ids.insert(sample.sample_id).second) {
                throw ParseError("manifest: duplicate sample_id '" + sample.sample_id + "'");
            }
            m.samples.push_back(std::move(sample));
        }
        if (j.contains("reference_image") && !j["reference_image"].is_null()) {
            m.reference_image = resolve(j["reference_image"].get<std::string>());
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("manifest: ") + e.what());
    }
    if (m.samples.empty()) throw ParseError("manifest: no samples");
    return m;
}

Manifest Manifest::load(const fs::path& path) {
    return parse(util::read_file(path), path.parent_path());
}

std::map<std::string, assess::Verdict> Manifest::ground_truth() const {
    std::map<std::string, assess::Verdict> out;
    for (const auto& s : samples) out[s.sample_id] = s.ground_truth;
    return out;
}

fs::path record_path(const fs::path& runs_root, const std::string& run_id,
                     assess::AblationConfig config, const std::string& sample_id) {
    return runs_root / run_id / std::string(assess::to_string(config)) / (sample_id + ".json");
}

namespace {

bool record_is_complete(const fs::path& path) {
    if (!fs::exists(path)) return false;
    try {
        assess::AssessmentResponse::from_json(json::parse(util::read_file(path)));
        return true;
    } catch (const std::exception& e) {
        log::warn("existing record " + path.string() + " is unreadable; redoing it");
        return false;
    }
}

}  // namespace

AblationSummary run_ablation(const Manifest& manifest,
                             const std::set<assess::AblationConfig>& configs,
                             const extract::KnowledgeBrief* brief,
                             const assess::ImageInput* reference, backend::Backend& backend,
                             const fs::path& runs_root, const AblationOptions& options) {
    if (configs.empty()) throw PreconditionError("no configurations selected");
    for (auto c : configs) {
        if (assess::needs_brief(c) && !brief) {
            throw ConfigurationError(std::string(assess::to_string(c)) + " needs a knowledge brief");
        }
        if (assess::needs_reference(c) && !reference) {
            throw ConfigurationError(std::string(assess::to_string(c)) + " needs a reference image");
        }
    }

    struct Job {
        const Sample* sample;
        assess::AblationConfig config;
        fs::path path;
    };
    const std::string run_id = options.run_id.empty() ? backend.id() : options.run_id;
    AblationSummary summary;
    summary.run_dir = runs_root / run_id;

    std::vector<Job> jobs;
    for (auto c : assess::kAllConfigs) {
        if (!configs.contains(c)) continue;
        for (const auto& s : manifest.samples) {
            auto path = record_path(runs_root, run_id, c, s.sample_id);
            if (record_is_complete(path)) {
                ++summary.skipped;
                continue;
            }
            jobs.push_back({&s, c, std::move(path)});
        }
    }

    std::vector<std::string> errors(jobs.size());
    const std::size_t workers = options.max_in_flight ? options.max_in_flight : backend.max_in_flight();
    parallel_for(jobs.size(), workers, [&](std::size_t i) {
        const auto& job = jobs[i];
        try {
            const auto target = assess::ImageInput::load(job.sample->image, assess::ImageRole::target,
                                                         job.sample->sample_id);
            const auto chain = assess::build_prompt_chain(
                job.config, assess::needs_brief(job.config) ? brief : nullptr,
                assess::needs_reference(job.config) ? reference : nullptr, target, options.prompts);
            const auto response =
                assess::run_assessment(chain, backend, job.sample->sample_id, options.vocabulary);
            json record = response.to_json();
            record["image"] = job.sample->image.string();
            record["chain"] = chain.to_json();
            util::write_file_atomic(job.path, record.dump(2) + "\n");
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });

    for (std::size_t i = 0; i < jobs.size(); ++i) {
        if (errors[i].empty()) {
            ++summary.written;
        } else {
            log::warn("sample " + jobs[i].sample->sample_id + " / " +
                      std::string(assess::to_string(jobs[i].config)) + " failed: " + errors[i]);
            summary.failures.push_back({jobs[i].sample->sample_id,
                                        std::string(assess::to_string(jobs[i].config)), errors[i]});
        }
    }

    const fs::path failures_path = summary.run_dir / "failures.jsonl";
    if (summary.failures.empty()) {
        std::error_code ec;
        fs::remove(failures_path, ec);
    } else {
        std::string lines;
        for (const auto& f : summary.failures) {
            lines += json{{"sample_id", f.sample_id}, {"config", f.config}, {"reason", f.reason}}.dump();
            lines += '\n';
        }
        util::write_file_atomic(failures_path, lines);
    }
    return summary;
}

namespace {

void collect_run(const fs::path& run_dir, std::vector<RunRecord>& out) {
    const std::string run_id = run_dir.filename().string();
    for (auto c : assess::kAllConfigs) {
        const fs::path dir = run_dir / std::string(assess::to_string(c));
        if (!fs::is_directory(dir)) continue;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
            const std::string text = util::read_file(entry.path());
            try {
                const json j = json::parse(text);
                RunRecord r;
                r.run_id = run_id;
                r.response = assess::AssessmentResponse::from_json(j);
                r.image = j.value("image", "");
                r.path = entry.path();
                out.push_back(std::move(r));
            } catch (const json::exception& e) {
                throw ParseError(entry.path().string() + ": " + e.what());
            } catch (const ParseError& e) {
                throw ParseError(entry.path().string() + ": " + e.what());
            }
        }
    }
}

bool looks_like_run(const fs::path& dir) {
    return std::any_of(assess::kAllConfigs.begin(), assess::kAllConfigs.end(), [&](auto c) {
        return fs::is_directory(dir / std::string(assess::to_string(c)));
    });
}

std::size_t config_rank(assess::AblationConfig c) {
    return static_cast<std::size_t>(
        std::find(assess::kAllConfigs.begin(), assess::kAllConfigs.end(), c) -
        assess::kAllConfigs.begin());
}

}  // namespace

std::vector<RunRecord> load_run_records(const fs::path& runs_root) {
    if (!fs::is_directory(runs_root)) throw InputError("run directory " + runs_root.string() + " does not exist");
    std::vector<RunRecord> out;
    if (looks_like_run(runs_root)) {
        collect_run(runs_root, out);
    } else {
        for (const auto& entry : fs::directory_iterator(runs_root)) {
            if (entry.is_directory() && looks_like_run(entry.path())) collect_run(entry.path(), out);
        }
    }
    std::sort(out.begin(), out.end(), [](const RunRecord& a, const RunRecord& b) {
        if (a.run_id != b.run_id) return a.run_id < b.run_id;
        if (a.response.config != b.response.config) {
            return config_rank(a.response.config) < config_rank(b.response.config);
        }
        return a.response.sample_id < b.response.sample_id;
    });
    return out;
}

}  // namespace qavlm::eval
