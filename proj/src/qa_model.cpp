#include "vgtree/qa_model.hpp"

#include "vgtree/errors.hpp"
#include "vgtree/text.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

namespace vgtree {

namespace {

constexpr std::array<std::pair<QuestionType, std::string_view>, 7> kTypeNames{{
    {QuestionType::Temporal, "Temporal"},
    {QuestionType::Causal, "Causal"},
    {QuestionType::Descriptive, "Descriptive"},
    {QuestionType::Spatial, "Spatial"},
    {QuestionType::Action, "Action"},
    {QuestionType::Object, "Object"},
    {QuestionType::Unknown, "Unknown"},
}};

using json = nlohmann::ordered_json;

const std::set<std::string, std::less<>> kKnownKeys{"id", "video", "question", "options", "answer",
                                                    "type"};

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad())
        throw IoError("error while reading " + path.string());
    return ss.str();
}

void check_unique_ids(const Dataset& ds)
{
    std::unordered_set<std::string> seen;
    for (const auto& t : ds.tasks) {
        if (!seen.insert(t.id).second)
            throw DuplicateIdError("duplicate task id '" + t.id + "' in dataset " + ds.name);
    }
}

void infer_variant(Dataset& ds)
{
    for (const auto& t : ds.tasks) {
        if (auto it = t.extras.find("variant"); it != t.extras.end() && it->is_string() &&
                                                *it == to_string(DatasetVariant::Rewritten)) {
            ds.variant = DatasetVariant::Rewritten;
            return;
        }
    }
}

// RFC 4180-ish: quoted fields, doubled quotes, commas and newlines inside quotes.
std::vector<std::vector<std::string>> parse_csv(std::string_view content)
{
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < content.size(); ++i) {
        char c = content[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
        case '"':
            quoted = true;
            break;
        case ',':
            row.push_back(std::move(field));
            field.clear();
            break;
        case '\r':
            break;
        case '\n':
            row.push_back(std::move(field));
            field.clear();
            rows.push_back(std::move(row));
            row.clear();
            break;
        default:
            field.push_back(c);
        }
    }
    if (!field.empty() || !row.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

QuestionType nextqa_type(std::string_view code)
{
    if (code.empty())
        return QuestionType::Unknown;
    switch (code[0]) {
    case 'T':
        return QuestionType::Temporal;
    case 'C':
        return QuestionType::Causal;
    case 'D':
        return QuestionType::Descriptive;
    default:
        return QuestionType::Unknown;
    }
}

} // namespace

std::string_view to_string(QuestionType t)
{
    for (const auto& [v, name] : kTypeNames)
        if (v == t)
            return name;
    return "Unknown";
}

std::optional<QuestionType> question_type_from_string(std::string_view s)
{
    for (const auto& [v, name] : kTypeNames)
        if (text::to_lower(name) == text::to_lower(s))
            return v;
    return std::nullopt;
}

std::string_view to_string(DatasetVariant v)
{
    return v == DatasetVariant::Original ? "Original" : "Rewritten";
}

std::string_view to_string(Violation v)
{
    switch (v) {
    case Violation::EmptyId:
        return "EmptyId";
    case Violation::EmptyQuestion:
        return "EmptyQuestion";
    case Violation::TooFewOptions:
        return "TooFewOptions";
    case Violation::EmptyOption:
        return "EmptyOption";
    case Violation::DuplicateOption:
        return "DuplicateOption";
    case Violation::OptionIndexMismatch:
        return "OptionIndexMismatch";
    case Violation::GroundTruthOutOfRange:
        return "GroundTruthOutOfRange";
    }
    return "Unknown";
}

QATask make_task(std::string id, std::string video_ref, std::string question,
                 const std::vector<std::string>& options, std::optional<std::size_t> ground_truth,
                 QuestionType type)
{
    QATask t;
    t.id = std::move(id);
    t.video_ref = std::move(video_ref);
    t.question = std::move(question);
    for (std::size_t i = 0; i < options.size(); ++i)
        t.options.push_back({i, options[i]});
    t.ground_truth_index = ground_truth;
    t.question_type = type;
    return t;
}

const QATask* Dataset::find(std::string_view id) const
{
    auto it = std::find_if(tasks.begin(), tasks.end(), [&](const QATask& t) { return t.id == id; });
    return it == tasks.end() ? nullptr : &*it;
}

std::vector<Violation> validate_task(const QATask& task)
{
    std::vector<Violation> out;
    if (text::trim(task.id).empty())
        out.push_back(Violation::EmptyId);
    if (text::trim(task.question).empty())
        out.push_back(Violation::EmptyQuestion);
    if (task.options.size() < 2)
        out.push_back(Violation::TooFewOptions);

    bool empty_option = false;
    bool bad_index = false;
    std::set<std::string> seen;
    bool duplicate = false;
    for (std::size_t i = 0; i < task.options.size(); ++i) {
        const auto& opt = task.options[i];
        if (opt.index != i)
            bad_index = true;
        if (text::trim(opt.text).empty()) {
            empty_option = true;
            continue;
        }
        if (!seen.insert(opt.text).second)
            duplicate = true;
    }
    if (empty_option)
        out.push_back(Violation::EmptyOption);
    if (duplicate)
        out.push_back(Violation::DuplicateOption);
    if (bad_index)
        out.push_back(Violation::OptionIndexMismatch);
    if (task.ground_truth_index && *task.ground_truth_index >= task.options.size())
        out.push_back(Violation::GroundTruthOutOfRange);
    return out;
}

json task_to_json(const QATask& task)
{
    json j;
    j["id"] = task.id;
    j["video"] = task.video_ref;
    j["question"] = task.question;
    json opts = json::array();
    for (const auto& o : task.options)
        opts.push_back(o.text);
    j["options"] = std::move(opts);
    j["answer"] = task.ground_truth_index ? json(*task.ground_truth_index) : json(nullptr);
    j["type"] = task.question_type == QuestionType::Unknown ? json(nullptr)
                                                            : json(std::string(to_string(task.question_type)));
    for (const auto& [k, v] : task.extras.items())
        j[k] = v;
    return j;
}

QATask task_from_json(const json& record)
{
    std::vector<std::string> problems;
    if (!record.is_object())
        throw SchemaError({"record is not a JSON object"});

    auto require_string = [&](const char* key) -> std::string {
        auto it = record.find(key);
        if (it == record.end()) {
            problems.push_back(std::string("missing field '") + key + "'");
            return {};
        }
        if (!it->is_string()) {
            problems.push_back(std::string("field '") + key + "' must be a string");
            return {};
        }
        return it->get<std::string>();
    };

    QATask t;
    t.id = require_string("id");
    t.video_ref = require_string("video");
    t.question = require_string("question");

    if (auto it = record.find("options"); it == record.end()) {
        problems.push_back("missing field 'options'");
    } else if (!it->is_array()) {
        problems.push_back("field 'options' must be an array");
    } else {
        for (std::size_t i = 0; i < it->size(); ++i) {
            const auto& o = (*it)[i];
            if (!o.is_string()) {
                problems.push_back("option " + std::to_string(i) + " must be a string");
                continue;
            }
            t.options.push_back({t.options.size(), o.get<std::string>()});
        }
    }

    if (auto it = record.find("answer"); it != record.end() && !it->is_null()) {
        if (!it->is_number_integer() || it->get<long long>() < 0)
            problems.push_back("field 'answer' must be a non-negative integer or null");
        else
            t.ground_truth_index = it->get<std::size_t>();
    }

    if (auto it = record.find("type"); it != record.end() && !it->is_null()) {
        if (!it->is_string()) {
            problems.push_back("field 'type' must be a string or null");
        } else if (auto qt = question_type_from_string(it->get<std::string>())) {
            t.question_type = *qt;
        } else {
            problems.push_back("unknown question type '" + it->get<std::string>() + "'");
        }
    }

    for (const auto& [k, v] : record.items())
        if (!kKnownKeys.contains(k))
            t.extras[k] = v;

    if (problems.empty()) {
        for (auto v : validate_task(t)) {
            if (v == Violation::GroundTruthOutOfRange)
                problems.push_back("answer index " + std::to_string(*t.ground_truth_index) +
                                   " out of range for " + std::to_string(t.options.size()) +
                                   " options");
            else
                problems.push_back(std::string("invalid task: ") + std::string(to_string(v)));
        }
    }
    if (!problems.empty())
        throw SchemaError(std::move(problems));
    return t;
}

Dataset parse_dataset_jsonl(std::string_view content, std::string name)
{
    Dataset ds;
    ds.name = std::move(name);
    std::vector<std::string> problems;
    auto lines = text::split_lines(content);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (text::trim(lines[i]).empty())
            continue;
        const std::string where = "line " + std::to_string(i + 1) + ": ";
        json record;
        try {
            record = json::parse(lines[i]);
        } catch (const json::parse_error& e) {
            problems.push_back(where + "invalid JSON (" + e.what() + ")");
            continue;
        }
        try {
            ds.tasks.push_back(task_from_json(record));
        } catch (const SchemaError& e) {
            for (const auto& p : e.problems())
                problems.push_back(where + p);
        }
    }
    if (!problems.empty())
        throw SchemaError(std::move(problems));
    check_unique_ids(ds);
    infer_variant(ds);
    return ds;
}

Dataset parse_nextqa_csv(std::string_view content, std::string name)
{
    auto rows = parse_csv(content);
    if (rows.empty())
        throw SchemaError({"line 1: empty CSV"});
    const auto& header = rows.front();
    auto column = [&](std::string_view key) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (text::trim(header[i]) == key)
                return i;
        return std::nullopt;
    };
    auto video = column("video");
    auto question = column("question");
    auto answer = column("answer");
    auto qid = column("qid");
    auto type = column("type");
    std::vector<std::size_t> option_cols;
    for (int k = 0;; ++k) {
        auto c = column("a" + std::to_string(k));
        if (!c)
            break;
        option_cols.push_back(*c);
    }
    if (!video || !question || option_cols.empty())
        throw SchemaError({"line 1: CSV header needs video, question and a0..aN columns"});

    Dataset ds;
    ds.name = std::move(name);
    std::vector<std::string> problems;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() == 1 && text::trim(row[0]).empty())
            continue;
        const std::string where = "line " + std::to_string(r + 1) + ": ";
        auto cell = [&](std::size_t c) { return c < row.size() ? text::trim(row[c]) : std::string(); };
        json rec;
        std::string vid = cell(*video);
        std::string id = qid ? vid + "_" + cell(*qid) : std::to_string(r);
        rec["id"] = id;
        rec["video"] = vid;
        rec["question"] = cell(*question);
        json opts = json::array();
        for (auto c : option_cols)
            opts.push_back(cell(c));
        rec["options"] = opts;
        if (answer && !cell(*answer).empty()) {
            try {
                rec["answer"] = std::stoll(cell(*answer));
            } catch (const std::exception&) {
                problems.push_back(where + "answer is not an integer");
                continue;
            }
        }
        if (type) {
            auto qt = nextqa_type(cell(*type));
            if (qt != QuestionType::Unknown)
                rec["type"] = std::string(to_string(qt));
            rec["source_type"] = cell(*type);
        }
        try {
            ds.tasks.push_back(task_from_json(rec));
        } catch (const SchemaError& e) {
            for (const auto& p : e.problems())
                problems.push_back(where + p);
        }
    }
    if (!problems.empty())
        throw SchemaError(std::move(problems));
    check_unique_ids(ds);
    return ds;
}

Dataset load_dataset(const std::filesystem::path& path, std::optional<DatasetFormat> format_hint)
{
    auto format = format_hint.value_or(text::to_lower(path.extension().string()) == ".csv"
                                           ? DatasetFormat::NextQaCsv
                                           : DatasetFormat::JsonLines);
    auto content = read_file(path);
    auto name = path.stem().string();
    return format == DatasetFormat::NextQaCsv ? parse_nextqa_csv(content, name)
                                              : parse_dataset_jsonl(content, name);
}

std::string serialize_dataset(const Dataset& dataset)
{
    std::string out;
    for (const auto& t : dataset.tasks) {
        out += task_to_json(t).dump();
        out += '\n';
    }
    return out;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << serialize_dataset(dataset);
    if (!out)
        throw IoError("error while writing " + path.string());
}

} // namespace vgtree
