//! Default prompt pack, embedded at build time.

pub(super) const FILES: &[(&str, &str)] = &[
    ("manifest.toml", include_str!("../../prompts/manifest.toml")),
    ("strategies.toml", include_str!("../../prompts/strategies.toml")),
    ("rate.txt", include_str!("../../prompts/rate.txt")),
    ("da.txt", include_str!("../../prompts/da.txt")),
    ("mcg_base.txt", include_str!("../../prompts/mcg_base.txt")),
    ("mcg_terms.txt", include_str!("../../prompts/mcg_terms.txt")),
    ("mcg_terms_ans.txt", include_str!("../../prompts/mcg_terms_ans.txt")),
    ("mcg_terms_quest.txt", include_str!("../../prompts/mcg_terms_quest.txt")),
    ("mcg_terms_quest_ans.txt", include_str!("../../prompts/mcg_terms_quest_ans.txt")),
    ("mcg_terms_wo_quest.txt", include_str!("../../prompts/mcg_terms_wo_quest.txt")),
    ("mcg_wo_quest.txt", include_str!("../../prompts/mcg_wo_quest.txt")),
    ("mcg_wo_essential_knowledge.txt", include_str!("../../prompts/mcg_wo_essential_knowledge.txt")),
    ("mcg_quest_ans.txt", include_str!("../../prompts/mcg_quest_ans.txt")),
    ("mcg_ans.txt", include_str!("../../prompts/mcg_ans.txt")),
    ("icd.txt", include_str!("../../prompts/icd.txt")),
    ("fac.txt", include_str!("../../prompts/fac.txt")),
    ("fau_omitted_answer.txt", include_str!("../../prompts/fau_omitted_answer.txt")),
    ("fau_irrelevant_content.txt", include_str!("../../prompts/fau_irrelevant_content.txt")),
];
