#pragma once
// Prompt templates for T2I concept generation and I2I concept removal.
// Template bodies are part of the external contract and must stay
// byte-stable; tests pin them against golden files.

#include <string>

#include "conceptfaith/catalog.hpp"
#include "conceptfaith/common.hpp"

namespace conceptfaith {

inline constexpr const char* kConceptPlaceholder = "[CONCEPT]";

enum class PromptKind { GenObject, GenTexture, Removal };

struct PromptTemplate {
    PromptKind kind;
    std::string body;  // contains [CONCEPT] at least once
};

inline const PromptTemplate& prompt_template(PromptKind kind) {
    static const PromptTemplate object{
        PromptKind::GenObject,
        "A realistic photo of a [CONCEPT] shown clearly in action and in its natural setting. "
        "The image should focus on the object's shape, material, and details, captured with "
        "natural lighting and minimal background distractions. Photographed from different "
        "angles or in natural settings, but always with the object clearly visible and "
        "realistically rendered."};
    static const PromptTemplate texture{
        PromptKind::GenTexture,
        "A realistic close-up of the concept [CONCEPT] as the main subject, shown in high "
        "detail and natural lighting. The concept should fill the frame or dominate the "
        "image, with clear texture and form. Multiple perspectives and realistic, rich, "
        "colorful surfaces are encouraged."};
    static const PromptTemplate removal{
        PromptKind::Removal,
        "Completely remove the concept of [CONCEPT] from the image, keeping it as visually "
        "similar as possible without [CONCEPT] being present at all."};
    switch (kind) {
        case PromptKind::GenObject: return object;
        case PromptKind::GenTexture: return texture;
        case PromptKind::Removal: return removal;
    }
    return removal;
}

// Substitutes every placeholder occurrence; the concept name is
// whitespace-trimmed first.
inline std::string render_prompt(const PromptTemplate& tmpl, const std::string& concept_name) {
    const std::string name = trim(concept_name);
    require(!name.empty(), "empty concept");
    require(contains(tmpl.body, kConceptPlaceholder), "template missing " + std::string(kConceptPlaceholder));
    return replace_all(tmpl.body, kConceptPlaceholder, name);
}

inline std::string render_generation_prompt(const ConceptSpec& spec) {
    const PromptKind kind =
        spec.concept_type == ConceptType::Object ? PromptKind::GenObject : PromptKind::GenTexture;
    return render_prompt(prompt_template(kind), spec.name);
}

inline std::string render_removal_prompt(const ConceptSpec& spec) {
    return render_prompt(prompt_template(PromptKind::Removal), spec.name);
}

}  // namespace conceptfaith
