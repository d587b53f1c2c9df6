# Fichier vide requis pour que Python reconnaisse le répertoire comme un package
