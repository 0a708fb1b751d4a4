from transformers import AutoModel

def encode(texts, model):
    return model(texts).pooler_output
