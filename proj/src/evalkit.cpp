#include "postrl/evalkit.hpp"

#include <set>
#include <string>

#include "postrl/errors.hpp"
#include "postrl/util.hpp"

namespace postrl {

namespace {

double pct(double fraction) { return util::round_half_up_1dp(fraction * 100.0); }

nlohmann::json cell_json(const CellStats& c) {
    nlohmann::json j;
    j["count"] = c.count;
    j["correct"] = c.correct;
    if (c.present()) {
        j["absent"] = false;
        j["acc"] = pct(c.acc());
    } else {
        j["absent"] = true;
        j["acc"] = nullptr;
    }
    return j;
}

PredictionRecord record_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidInputError("record is not a JSON object");
    PredictionRecord r;
    r.id = j.at("id").get<std::string>();
    if (r.id.empty()) throw InvalidInputError("record id is empty");
    r.modality = modality_from_name(j.at("modality").get<std::string>());
    r.gold = label_from_name(j.at("gold").get<std::string>());
    if (j.contains("predicted") && !j.at("predicted").is_null())
        r.predicted = label_from_name(j.at("predicted").get<std::string>());
    r.mode = mode_from_name(j.at("mode").get<std::string>());
    r.well_formed = j.at("well_formed").get<bool>();
    return r;
}

nlohmann::json record_to_json(const PredictionRecord& r) {
    nlohmann::json j;
    j["id"] = r.id;
    j["modality"] = modality_name(r.modality);
    j["gold"] = label_name(r.gold);
    j["predicted"] = r.predicted ? nlohmann::json(label_name(*r.predicted)) : nlohmann::json();
    j["mode"] = mode_name(r.mode);
    j["well_formed"] = r.well_formed;
    return j;
}

}  // namespace

const char* modality_name(Modality m) { return m == Modality::image ? "image" : "video"; }

Modality modality_from_name(const std::string& name) {
    if (name == "image") return Modality::image;
    if (name == "video") return Modality::video;
    throw InvalidInputError("unknown modality: " + name);
}

const char* label_name(Label l) { return l == Label::real ? "real" : "fake"; }

Label label_from_name(const std::string& name) {
    if (name == "real") return Label::real;
    if (name == "fake") return Label::fake;
    throw InvalidInputError("unknown label: " + name);
}

std::optional<Label> label_from_letter(std::optional<char> letter) {
    if (!letter) return std::nullopt;
    if (*letter == 'A' || *letter == 'a') return Label::real;
    if (*letter == 'B' || *letter == 'b') return Label::fake;
    return std::nullopt;
}

double CellStats::acc() const {
    if (!present()) throw InvalidInputError("accuracy of an empty cell is undefined");
    return static_cast<double>(correct) / static_cast<double>(count);
}

SubcategoryReport evaluate(const std::vector<PredictionRecord>& records) {
    if (records.empty()) throw InvalidInputError("no prediction records to evaluate");

    SubcategoryReport rep;
    for (const auto& r : records) {
        CellStats& cell = r.modality == Modality::image
                              ? (r.gold == Label::real ? rep.image_real : rep.image_fake)
                              : (r.gold == Label::real ? rep.video_real : rep.video_fake);
        const bool correct = r.predicted && *r.predicted == r.gold;
        cell.count += 1;
        cell.correct += correct ? 1 : 0;
        rep.total += 1;
        rep.correct += correct ? 1 : 0;

        // Fake is the positive class; an absent prediction folds to real.
        const Label effective = r.predicted.value_or(Label::real);
        if (r.gold == Label::fake)
            effective == Label::fake ? ++rep.tp : ++rep.fn;
        else
            effective == Label::fake ? ++rep.fp : ++rep.tn;
    }

    rep.overall_acc = static_cast<double>(rep.correct) / static_cast<double>(rep.total);
    rep.precision = rep.tp + rep.fp > 0
                        ? static_cast<double>(rep.tp) / static_cast<double>(rep.tp + rep.fp)
                        : 0.0;
    rep.recall = rep.tp + rep.fn > 0
                     ? static_cast<double>(rep.tp) / static_cast<double>(rep.tp + rep.fn)
                     : 0.0;
    rep.f1 = rep.precision + rep.recall > 0.0
                 ? 2.0 * rep.precision * rep.recall / (rep.precision + rep.recall)
                 : 0.0;
    return rep;
}

std::vector<PredictionRecord> ingest_predictions(const std::string& path) {
    const std::string text = util::read_text_file(path);
    std::vector<PredictionRecord> records;
    std::vector<std::string> problems;
    std::set<std::string> seen;

    const auto lines = util::split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        if (util::is_whitespace_only(line)) continue;
        const std::string where = "line " + std::to_string(i + 1);
        try {
            const PredictionRecord r = record_from_json(nlohmann::json::parse(line));
            if (!seen.insert(r.id).second)
                problems.push_back(where + ": duplicate id '" + r.id + "'");
            else
                records.push_back(r);
        } catch (const nlohmann::json::exception& e) {
            problems.push_back(where + ": " + e.what());
        } catch (const InvalidInputError& e) {
            problems.push_back(where + ": " + e.what());
        }
    }
    if (!problems.empty()) {
        std::string msg = path + ": " + std::to_string(problems.size()) + " bad line(s)";
        for (const auto& p : problems) msg += "\n  " + p;
        throw IngestError(msg);
    }
    return records;
}

void emit_predictions(const std::string& path, const std::vector<PredictionRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += record_to_json(r).dump();
        out += '\n';
    }
    util::write_text_file_atomic(path, out);
}

nlohmann::json report_to_json(const SubcategoryReport& rep, const nlohmann::json& meta) {
    nlohmann::json j;
    j["kind"] = "eval_report";
    j["meta"] = meta;
    j["cells"] = {{"image_real", cell_json(rep.image_real)},
                  {"image_fake", cell_json(rep.image_fake)},
                  {"video_real", cell_json(rep.video_real)},
                  {"video_fake", cell_json(rep.video_fake)}};
    j["overall"] = {{"count", rep.total}, {"correct", rep.correct}, {"acc", pct(rep.overall_acc)}};
    j["f1"] = {{"tp", rep.tp},
               {"fp", rep.fp},
               {"fn", rep.fn},
               {"tn", rep.tn},
               {"precision", pct(rep.precision)},
               {"recall", pct(rep.recall)},
               {"f1", pct(rep.f1)}};
    return j;
}

void emit_report(const std::string& path, const SubcategoryReport& rep,
                 const nlohmann::json& meta) {
    util::json_to_file_atomic(path, report_to_json(rep, meta));
}

}  // namespace postrl
