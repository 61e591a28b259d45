// Evaluation metrics over prediction records: per-(modality, label) cell
// accuracy, pooled accuracy, and binary F1 with the fake class positive.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "postrl/chat_template.hpp"

namespace postrl {

enum class Modality { image, video };
enum class Label { real, fake };

const char* modality_name(Modality m);
Modality modality_from_name(const std::string& name);  // InvalidInputError on unknown
const char* label_name(Label l);
Label label_from_name(const std::string& name);  // InvalidInputError on unknown

// Answer-option mapping: A -> real, B -> fake; anything else is absent.
std::optional<Label> label_from_letter(std::optional<char> letter);

struct PredictionRecord {
    std::string id;
    Modality modality = Modality::image;
    Label gold = Label::real;
    std::optional<Label> predicted;  // absent counts as wrong and as predicted-real
    ChatMode mode = ChatMode::thinking;
    bool well_formed = false;

    bool operator==(const PredictionRecord&) const = default;
};

struct CellStats {
    int count = 0;
    int correct = 0;

    bool present() const { return count > 0; }
    double acc() const;  // fraction; InvalidInputError when the cell is empty
};

struct SubcategoryReport {
    CellStats image_real, image_fake, video_real, video_fake;
    int total = 0;
    int correct = 0;
    double overall_acc = 0.0;  // fraction in [0, 1]

    // Confusion counts with fake positive; absent predictions fold to real.
    int tp = 0, fp = 0, fn = 0, tn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;  // fractions; 0 when undefined
};

// InvalidInputError on empty input.
SubcategoryReport evaluate(const std::vector<PredictionRecord>& records);

// JSON-lines prediction files. Ingest rejects the whole file with an
// IngestError listing every malformed line (1-based) and duplicate id.
std::vector<PredictionRecord> ingest_predictions(const std::string& path);
void emit_predictions(const std::string& path, const std::vector<PredictionRecord>& records);

// Report JSON: raw counts plus display percentages rounded half-up to one
// decimal; empty cells are marked absent with a null accuracy.
nlohmann::json report_to_json(const SubcategoryReport& report,
                              const nlohmann::json& meta = nlohmann::json::object());
void emit_report(const std::string& path, const SubcategoryReport& report,
                 const nlohmann::json& meta = nlohmann::json::object());

}  // namespace postrl
