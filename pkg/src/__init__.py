"Pacote src para o projeto Rotas maps."