#include "qavlm/eval/annotation.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <tuple>

#include "qavlm/errors.hpp"
#include "qavlm/log.hpp"
#include "qavlm/util.hpp"

namespace qavlm::eval {

using nlohmann::json;

json AnnotationRecord::to_json() const {
    return {{"sample_id", sample_id},
            {"config", config},
            {"backend_id", backend_id},
            {"validity", validity},
            {"omitted_relevant", omitted_relevant},
            {"included_irrelevant", included_irrelevant},
            {"annotator_id", annotator_id},
            {"annotated_at", annotated_at}};
}

AnnotationRecord AnnotationRecord::from_json(const json& j) {
    AnnotationRecord r;
    r.sample_id = j.at("sample_id").get<std::string>();
    r.config = j.at("config").get<std::string>();
    r.backend_id = j.at("backend_id").get<std::string>();
    r.validity = j.at("validity").get<bool>();
    r.omitted_relevant = j.at("omitted_relevant").get<int>();
    r.included_irrelevant = j.at("included_irrelevant").get<int>();
    r.annotator_id = j.at("annotator_id").get<std::string>();
    r.annotated_at = j.at("annotated_at").get<std::string>();
    assess::config_from_string(r.config);
    if (r.omitted_relevant < 0 || r.included_irrelevant < 0) {
        throw ParseError("annotation counts must be non-negative");
    }
    return r;
}

std::vector<AnnotationRecord> parse_annotations(std::string_view text) {
    std::vector<AnnotationRecord> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        const bool terminated = nl != std::string_view::npos;
        if (!terminated) nl = text.size();
        const std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (util::trim(line).empty()) continue;
        try {
            out.push_back(AnnotationRecord::from_json(json::parse(line)));
        } catch (const std::exception& e) {
            if (!terminated) {
                log::warn("annotations: dropping incomplete final line " + std::to_string(line_no));
                break;
            }
            throw ParseError(std::string("annotations: ") + e.what(), line_no);
        }
    }
    return out;
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
    return parse_annotations(util::read_file(path));
}

std::vector<AnnotationRecord> latest_annotations(const std::vector<AnnotationRecord>& records) {
    using Key = std::tuple<std::string, std::string, std::string, std::string>;
    std::map<Key, std::size_t> latest;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const Key key{r.backend_id, r.sample_id, r.config, r.annotator_id};
        auto it = latest.find(key);
        if (it == latest.end() || records[it->second].annotated_at <= r.annotated_at) {
            latest[key] = i;
        }
    }
    std::vector<std::size_t> keep;
    for (const auto& [key, idx] : latest) keep.push_back(idx);
    std::sort(keep.begin(), keep.end());
    std::vector<AnnotationRecord> out;
    for (auto i : keep) out.push_back(records[i]);
    return out;
}

namespace {

struct Prompter {
    std::istream& in;
    std::ostream& out;

    // nullopt on end of input.
    std::optional<std::string> ask(const std::string& question) {
        out << question << std::flush;
        std::string line;
        if (!std::getline(in, line)) return std::nullopt;
        return util::trim(line);
    }

    std::optional<int> ask_count(const std::string& question, int lo, int hi) {
        while (true) {
            auto answer = ask(question);
            if (!answer) return std::nullopt;
            try {
                std::size_t used = 0;
                const int v = std::stoi(*answer, &used);
                if (used == answer->size() && v >= lo && v <= hi) return v;
            } catch (const std::exception&) {
            }
            out << "  please enter a whole number between " << lo << " and " << hi << "\n";
        }
    }
};

void show_record(std::ostream& out, const RunRecord& r, std::size_t position, std::size_t total,
                 const assess::FeatureVocabulary& vocabulary) {
    out << "\n[" << position << "/" << total << "] backend=" << r.run_id
        << " config=" << assess::to_string(r.response.config) << " sample=" << r.response.sample_id
        << "\nimage: " << (r.image.empty() ? std::string("(not recorded)") : r.image)
        << "\n--- response ---\n"
        << r.response.raw_text << "\n--- checklist: core parameters ---\n";
    const auto detected = assess::detect_features(r.response.raw_text, vocabulary);
    auto mentioned = [&](const std::string& name) {
        return std::find(detected.begin(), detected.end(), name) != detected.end();
    };
    for (const auto& e : vocabulary.entries) {
        out << "  [" << (mentioned(e.name) ? 'x' : ' ') << "] " << e.name << "\n";
    }
    out << "  ([x] = mentioned, detected lexically. Aspect ratio and dilution count toward the\n"
           "   core parameters they are derived from.)\n";
}

}  // namespace

AnnotateSummary annotate_interactive(const std::vector<RunRecord>& records,
                                     const assess::FeatureVocabulary& vocabulary,
                                     const std::filesystem::path& annotation_path,
                                     const std::string& annotator_id, std::istream& in,
                                     std::ostream& out) {
    if (records.empty()) throw NoDataError("no assessment responses to annotate");
    if (annotator_id.empty()) throw PreconditionError("annotator id is empty");

    std::vector<AnnotationRecord> existing;
    if (std::filesystem::exists(annotation_path)) existing = load_annotations(annotation_path);
    std::set<std::tuple<std::string, std::string, std::string>> done;
    for (const auto& a : existing) {
        if (a.annotator_id == annotator_id) done.insert({a.backend_id, a.config, a.sample_id});
    }
    auto key_of = [](const RunRecord& r) {
        return std::tuple<std::string, std::string, std::string>{
            r.run_id, std::string(assess::to_string(r.response.config)), r.response.sample_id};
    };

    AnnotateSummary summary;
    summary.total = records.size();
    for (const auto& r : records) summary.already_done += done.contains(key_of(r));

    if (annotation_path.has_parent_path()) {
        std::filesystem::create_directories(annotation_path.parent_path());
    }
    std::ofstream sink(annotation_path, std::ios::app);
    if (!sink) throw Error("cannot open " + annotation_path.string() + " for appending");

    Prompter prompt{in, out};
    out << "Loaded " << records.size() << " responses; " << summary.already_done
        << " already annotated by " << annotator_id << ".\n";

    enum class Outcome { recorded, revise, quit, end_of_input };
    std::size_t revise_target = 0;

    // Collects and appends one annotation for record k (0-based).
    auto annotate = [&](std::size_t k, bool allow_commands) -> Outcome {
        const auto& r = records[k];
        show_record(out, r, k + 1, records.size(), vocabulary);
        bool valid = false;
        while (true) {
            auto answer = prompt.ask(allow_commands
                                         ? "Valid reasoning? [y/n, r <k> revise record k, q quit]: "
                                         : "Valid reasoning? [y/n]: ");
            if (!answer) return Outcome::end_of_input;
            const std::string a = util::to_lower(*answer);
            if (a == "y" || a == "yes") {
                valid = true;
                break;
            }
            if (a == "n" || a == "no") break;
            if (allow_commands && a == "q") return Outcome::quit;
            if (allow_commands && a.size() > 2 && a[0] == 'r' && a[1] == ' ') {
                std::size_t used = 0;
                const std::string num = util::trim(std::string_view(a).substr(2));
                try {
                    const auto target = std::stoul(num, &used);
                    if (used == num.size() && target >= 1 && target <= records.size()) {
                        revise_target = target - 1;
                        return Outcome::revise;
                    }
                } catch (const std::exception&) {
                }
                out << "  no such record; choose 1-" << records.size() << "\n";
                continue;
            }
            out << "  please answer y or n\n";
        }
        auto omitted = prompt.ask_count(
            "Omitted relevant features (0-" + std::to_string(kCoreParameterCount) + "): ", 0,
            kCoreParameterCount);
        if (!omitted) return Outcome::end_of_input;
        auto irrelevant = prompt.ask_count("Included irrelevant features (0-99): ", 0, 99);
        if (!irrelevant) return Outcome::end_of_input;

        AnnotationRecord rec;
        rec.sample_id = r.response.sample_id;
        rec.config = std::string(assess::to_string(r.response.config));
        rec.backend_id = r.run_id;
        rec.validity = valid;
        rec.omitted_relevant = *omitted;
        rec.included_irrelevant = *irrelevant;
        rec.annotator_id = annotator_id;
        rec.annotated_at = util::utc_timestamp();
        sink << rec.to_json().dump() << '\n' << std::flush;
        done.insert(key_of(r));
        return Outcome::recorded;
    };

    for (std::size_t k = 0; k < records.size();) {
        if (done.contains(key_of(records[k]))) {
            ++k;
            continue;
        }
        switch (annotate(k, true)) {
            case Outcome::recorded:
                ++summary.added;
                ++k;
                break;
            case Outcome::revise:
                out << "Revising record " << revise_target + 1 << ".\n";
                if (annotate(revise_target, false) != Outcome::recorded) {
                    summary.quit_early = true;
                    return summary;
                }
                ++summary.revised;
                break;
            case Outcome::quit:
            case Outcome::end_of_input:
                summary.quit_early = true;
                return summary;
        }
    }
    // Everything is annotated; still allow revisions until the user quits.
    while (true) {
        auto answer = prompt.ask("All responses annotated. [r <k> revise record k, q quit]: ");
        if (!answer || util::to_lower(*answer) == "q") break;
        const std::string a = util::to_lower(*answer);
        std::size_t target = 0;
        try {
            if (a.size() > 2 && a[0] == 'r' && a[1] == ' ') target = std::stoul(a.substr(2));
        } catch (const std::exception&) {
        }
        if (target < 1 || target > records.size()) {
            out << "  unknown command\n";
            continue;
        }
        if (annotate(target - 1, false) != Outcome::recorded) break;
        ++summary.revised;
    }
    return summary;
}

}  // namespace qavlm::eval
