// Python bindings for the toolkit's main operations: the full command-line
// driver (argv in, exit code and captured streams out), judge parsing and
// selection, chat-vector arithmetic over checkpoint files, and the
// character tokenizer.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <string>
#include <vector>

#include "cdsynth/chat_vector.hpp"
#include "cdsynth/checkpoint.hpp"
#include "cdsynth/error.hpp"
#include "cdsynth/judge.hpp"
#include "cdsynth/run.hpp"
#include "cdsynth/vocab.hpp"

namespace py = pybind11;
using namespace cdsynth;

namespace {

py::tuple run_args(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("cdsynth");
    for (const std::string& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return py::make_tuple(code, out.str(), err.str());
}

py::dict verdict_dict(const JudgeVerdict& v) {
    py::dict d;
    d["strengths"] = v.strengths;
    d["weaknesses"] = v.weaknesses;
    d["score"] = v.score;
    d["raw"] = v.raw;
    return d;
}

py::dict report_dict(const DeltaReport& r) {
    py::dict d;
    d["cosine"] = r.cosine;
    d["matched_tensors"] = r.matched_tensors;
    d["norm_a"] = r.norm_a;
    d["norm_b"] = r.norm_b;
    py::list skipped;
    for (const SkippedTensor& s : r.skipped) {
        py::dict e;
        e["name"] = s.name;
        e["reason"] = s.reason;
        skipped.append(e);
    }
    d["skipped"] = skipped;
    return d;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Contrastive-decoding dataset synthesis and verification toolkit";

    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            std::string msg = std::string(to_string(e.kind())) + ": " + e.what();
            PyErr_SetString(PyExc_RuntimeError, msg.c_str());
        }
    });

    m.def("run", &run_args, py::arg("args"),
          "Run the command-line driver with the given argument list; returns "
          "(exit_code, stdout, stderr).");

    m.def(
        "parse_verdict",
        [](const std::string& reply) { return verdict_dict(parse_verdict(reply)); },
        py::arg("reply"),
        "Extract {strengths, weaknesses, score, raw} from a judge reply; raises "
        "RuntimeError when no valid verdict is present.");

    m.def(
        "render_prompt",
        [](const std::string& question, const std::string& answer) {
            return render_prompt(question, answer);
        },
        py::arg("question"), py::arg("answer"),
        "Fill the scoring rubric with a question and a candidate answer.");

    m.def(
        "best_of_n",
        [](const std::vector<int>& scores) {
            std::vector<JudgeVerdict> vs(scores.size());
            for (std::size_t i = 0; i < scores.size(); ++i) vs[i].score = scores[i];
            return best_of_n(vs);
        },
        py::arg("scores"), "Index of the highest score, first index winning ties.");

    m.def(
        "cosine",
        [](const std::string& path_a, const std::string& path_b) {
            return report_dict(cosine_similarity(load_checkpoint(path_a), load_checkpoint(path_b)));
        },
        py::arg("checkpoint_a"), py::arg("checkpoint_b"),
        "Cosine similarity between two checkpoints, flattened over shared tensors.");

    m.def(
        "extract_delta",
        [](const std::string& post, const std::string& pre, const std::string& out) {
            TensorMap delta = extract(load_checkpoint(post), load_checkpoint(pre));
            save_checkpoint(delta, out);
            return static_cast<std::int64_t>(delta.size());
        },
        py::arg("post"), py::arg("pre"), py::arg("out"),
        "Write post minus pre to a new checkpoint; returns the tensor count.");

    m.def(
        "apply_delta",
        [](const std::string& base, const std::string& delta, const std::string& out,
           double scale) {
            TensorMap shifted = apply(load_checkpoint(base), load_checkpoint(delta), scale);
            save_checkpoint(shifted, out);
            return static_cast<std::int64_t>(shifted.size());
        },
        py::arg("base"), py::arg("delta"), py::arg("out"), py::arg("scale") = 1.0,
        "Write base plus scale times delta to a new checkpoint.");

    m.def(
        "encode",
        [](const std::string& vocab_path, const std::string& text) {
            Vocabulary vocab = Vocabulary::load_json(vocab_path);
            return Tokenizer(vocab).encode(text);
        },
        py::arg("vocab"), py::arg("text"), "Token ids for a text under a vocabulary file.");

    m.def(
        "decode",
        [](const std::string& vocab_path, const std::vector<std::int32_t>& ids) {
            Vocabulary vocab = Vocabulary::load_json(vocab_path);
            return Tokenizer(vocab).decode(ids);
        },
        py::arg("vocab"), py::arg("ids"),
        "Text for a token id sequence; special tokens are dropped.");

    m.def("commands", [] { return command_names(); },
          "Names of all command-line subcommands.");
}
