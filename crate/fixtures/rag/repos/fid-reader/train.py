from encode import encode

def train(pairs, model, optimizer):
    for q, p in pairs:
        loss = -(encode([q], model) * encode([p], model)).sum()
        loss.backward()
        optimizer.step()
