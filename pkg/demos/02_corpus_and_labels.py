"""From raw dialogue samples to token ids and weak-supervision targets.

Run with: python3 demos/02_corpus_and_labels.py
"""

from ckl.corpus import build_vocab, encode_sample, tokenize
from ckl.synthetic import retrieval_corpus
from ckl.weak_supervision import TfIdfIndex, build_pseudo_gt, rank_knowledge, word_f1

samples = retrieval_corpus(n=5, n_knowledge=3, seed=0)
sample = samples[0]

print("== one sample ==")
for i, utterance in enumerate(sample.context):
    tag = "(post)" if i == len(sample.context) - 1 else ""
    print(f"  context[{i}] {tag}: {utterance}")
for j, sentence in enumerate(sample.knowledge):
    print(f"  knowledge[{j}]: {sentence}")
print(f"  response: {sample.response}")

print("\n== tokenizer ==")
print("tokenize('Pop music!') ->", tokenize("Pop music!"))

vocab = build_vocab(samples)
print(f"\nvocabulary holds {len(vocab)} tokens (5 reserved + content)")
enc = encode_sample(sample, vocab)
print("segment lengths:", enc.segment_lengths)
print("response ids (BOS ... EOS):", enc.response_ids)

print("\n== word-level F1 against the response ==")
resp = enc.response_tokens
for i, ctx in enumerate(enc.context_tokens):
    print(f"  F1(context[{i}], response) = {word_f1(ctx, resp):.3f}")

print("\n== TF-IDF retrieval with the response as query ==")
index = TfIdfIndex(enc.knowledge_tokens)
print("ranking:", rank_knowledge(index, enc.knowledge_tokens, resp))

gt = build_pseudo_gt(enc.context_tokens, enc.knowledge_tokens, resp, index, top_n=1)
print("\n== pseudo ground truths ==")
print("gt_clwr:", gt.gt_clwr, " (argmax-F1 utterance and the post)")
print("gt_clwk:", gt.gt_clwk, " (utterance closest to the retrieved sentence)")
print("gt_klw: ", gt.gt_klw, f" (top-1 retrieved sentence, index {gt.top1_rk_index})")
