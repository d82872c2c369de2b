"""Tokenize a few source lines, abstract their literals, and rebuild statements."""

from convfix.tokenizer import detokenize, get_profile, reconstruct, tokenize

java = get_profile("java")

lines = [
    "if (mLocale == null) return getDefault();",
    'String label = "max size " + maxSize;',
    "buffer.put(offset + 16, utf8Bytes);",
]

for line in lines:
    plain = tokenize(line, java)
    abstract = tokenize(line, java, abstract=True)
    print(line)
    print("  tokens   :", " ".join(plain.tokens))
    print("  abstract :", " ".join(abstract.tokens))
    print("  literals :", abstract.abstraction_table)
    print("  back     :", detokenize(plain))
    print()

# a model emits placeholders; literals are copied back from the buggy line
buggy = "buffer.put(offset + 16, utf8Bytes);"
predicted = ["buffer", ".", "put", "(", "offset", "+", "<NUMBER>", "-", "1", ",", "utf", "<CAMEL>", "8",
             "<CAMEL>", "Bytes", ")", ";"]
print("candidates for", " ".join(predicted))
for stmt in reconstruct(predicted, buggy, java):
    print("  ", stmt)

python = get_profile("python")
for line in ["for _ in range(10):", "self.max_size = max_size or 70_000"]:
    print(line, "->", tokenize(line, python).tokens)
