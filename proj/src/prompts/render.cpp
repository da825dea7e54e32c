#include <fmt/format.h>

#include "geoforge/prompts.hpp"

namespace geoforge::prompts {

namespace embedded {
std::string_view qa();
std::string_view code();
std::string_view score();
std::string_view difficulty();
std::string_view geoscript_reference();
}  // namespace embedded

std::string to_string(PromptKind kind) {
  switch (kind) {
    case PromptKind::QaGeneration: return "qa";
    case PromptKind::CodeGeneration: return "code";
    case PromptKind::ImageScoring: return "score";
    case PromptKind::DifficultyJudge: return "difficulty";
  }
  return "qa";
}

std::string template_file(PromptKind kind) { return to_string(kind) + ".txt"; }

std::string_view template_text(PromptKind kind) {
  switch (kind) {
    case PromptKind::QaGeneration: return embedded::qa();
    case PromptKind::CodeGeneration: return embedded::code();
    case PromptKind::ImageScoring: return embedded::score();
    case PromptKind::DifficultyJudge: return embedded::difficulty();
  }
  return {};
}

std::string_view geoscript_reference() { return embedded::geoscript_reference(); }

namespace {

void need(bool present, const char* name) {
  if (!present) throw PromptError(ErrorKind::MissingBinding, std::string("missing binding: ") + name);
}

void need_image(const std::optional<Image>& image, const char* name) {
  need(image.has_value() && !image->bytes.empty(), name);
}

template <typename Ctx>
const Ctx& expect(const PromptContext& ctx, PromptKind kind) {
  const Ctx* c = std::get_if<Ctx>(&ctx);
  if (c == nullptr) {
    throw PromptError(ErrorKind::WrongContextKind, "context does not match prompt kind " + to_string(kind));
  }
  return *c;
}

gateway::Message system_message(std::string_view text) {
  return gateway::Message{gateway::Role::System, std::string(text), {}};
}

}  // namespace

gateway::ChatRequest render_prompt(PromptKind kind, const PromptContext& ctx, const ModelRoles& models) {
  gateway::ChatRequest req;
  req.sampling = models.sampling;
  req.messages.push_back(system_message(template_text(kind)));
  gateway::Message user{gateway::Role::User, {}, {}};

  switch (kind) {
    case PromptKind::QaGeneration: {
      const auto& c = expect<QaContext>(ctx, kind);
      need(!c.question.empty(), "question");
      need(!c.answer.empty(), "answer");
      need_image(c.image, "image");
      req.model_id = models.vision_model;
      user.text = fmt::format("Question: {}\n\nAnswer: {}", c.question, c.answer);
      user.images.push_back(*c.image);
      break;
    }
    case PromptKind::CodeGeneration: {
      const auto& c = expect<CodeContext>(ctx, kind);
      need(!c.question.empty(), "question");
      need(!c.answer.empty(), "answer");
      need(!c.image_description.empty(), "image_description");
      need(c.candidate_index >= 1 && c.candidate_index <= c.candidate_total, "candidate_index");
      req.model_id = models.text_model;
      if (!c.language_reference.empty()) req.messages.push_back(system_message(c.language_reference));
      user.text = fmt::format("Question: {}\n\nAnswer: {}\n\nImage description: {}\n\nCandidate: {} of {}",
                              c.question, c.answer, c.image_description, c.candidate_index, c.candidate_total);
      break;
    }
    case PromptKind::ImageScoring: {
      const auto& c = expect<ScoringContext>(ctx, kind);
      need(!c.description.empty(), "description");
      need_image(c.image, "image");
      req.model_id = models.vision_model;
      user.text = "Image description: " + c.description;
      if (!c.question.empty()) user.text += "\n\nQuestion: " + c.question;
      user.images.push_back(*c.image);
      break;
    }
    case PromptKind::DifficultyJudge: {
      const auto& c = expect<DifficultyContext>(ctx, kind);
      need(!c.first.question.empty(), "question_1");
      need(!c.first.answer.empty(), "answer_1");
      need_image(c.first.image, "image_1");
      need(!c.second.question.empty(), "question_2");
      need(!c.second.answer.empty(), "answer_2");
      need_image(c.second.image, "image_2");
      req.model_id = models.vision_model;
      user.text = fmt::format("Question_1: {}\n\nAnswer_1: {}\n\nQuestion_2: {}\n\nAnswer_2: {}", c.first.question,
                              c.first.answer, c.second.question, c.second.answer);
      user.images.push_back(*c.first.image);
      user.images.push_back(*c.second.image);
      break;
    }
  }
  req.messages.push_back(std::move(user));
  return req;
}

}  // namespace geoforge::prompts
