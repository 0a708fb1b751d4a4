def generate(question, passages, generator):
    context = ' '.join(passages)
    return generator(question + ' ' + context)
